"""Simulation and analytics for Hawkes processes whose exciting function depends on the generation."""

__version__ = "0.1.0"

from .analytics import (
    EVEN_ODD,
    EquilibriumBound,
    LimitConstants,
    PartitionSpec,
    equilibrium_bound,
    generation_rates,
    limit_constants,
    mean_count,
    multivariate_check,
    partition_lln,
    partition_matrix,
    strong_cap,
)
from .config import Report, Scenario, load_scenario, save_scenario
from .deviations import (
    CumulantModel,
    Deterministic,
    ExponentialClaims,
    GammaClaims,
    LogNormalClaims,
    ParetoClaims,
    WeibullClaims,
    classical_rate,
    gamma_C,
    legendre,
    rate_IC,
    rate_J,
)
from .errors import HawkesError, NumericalError, ValidationError
from .kernels import (
    Constant,
    ErlangK,
    Exponential,
    Extension,
    KernelSequence,
    PiecewiseConstant,
    Tabulated,
    UniformSupport,
    classical,
)
from .microstructure import (
    CovarianceTable,
    PricePath,
    analytic_second_moments,
    covariance_table,
    epps_curve,
    signature_plot,
    stationary_paths,
)
from .ruin import RiskModel, heavy_tail_asymptote, lundberg_exponent, ruin_curve, simulate_ruin
from .simulate import EventLog, RngStream, replicate, simulate_batch, simulate_branching, simulate_thinning
