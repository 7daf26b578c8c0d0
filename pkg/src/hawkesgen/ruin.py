"""Surplus process with self-exciting claim arrivals: exponents, asymptotics and Monte Carlo ruin."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .analytics import limit_constants
from .deviations import (
    ClaimLaw,
    CumulantModel,
    Deterministic,
    gamma_C,
    gamma_C_prime,
    rate_IC,
    theta_c_compound,
)
from .errors import RuinConditionError, ValidationError
from .kernels import KernelSequence
from .simulate import _as_generator, simulate_batch

INF = math.inf


class NetProfitWarning(UserWarning):
    """Premium rate does not exceed the mean claim outflow ``m E[C]``."""


@dataclass
class RiskModel:
    """``R_t = u + p t - sum_{i <= N_t} C_i`` with arrivals from ``arrival``."""

    arrival: KernelSequence
    law: ClaimLaw
    p: float
    u: float = 0.0

    def __post_init__(self):
        if not self.p > 0 or self.u < 0:
            raise ValidationError("need premium p > 0 and reserve u >= 0")
        self.m = limit_constants(self.arrival).m
        self.mean_claim = self.law.mean()
        self.net_profit_margin = self.p - self.m * self.mean_claim
        if self.net_profit_margin <= 0:
            warnings.warn(
                f"net profit condition fails: p = {self.p} <= m E[C] = {self.m * self.mean_claim:.6g}",
                NetProfitWarning,
                stacklevel=2,
            )
        self._cumulant = CumulantModel(self.arrival)

    @property
    def cumulant(self) -> CumulantModel:
        return self._cumulant

    def light_tail_margins(self) -> dict:
        """Both margins of ``m E[C] < p < Gamma_C(theta_c) / theta_c``."""
        tc = theta_c_compound(self._cumulant, self.law)
        upper = INF
        if self.law.light_tailed and tc > 0 and math.isfinite(tc):
            upper = gamma_C(self._cumulant, self.law, tc) / tc
        elif not self.law.light_tailed:
            upper = -INF
        return {
            "net_profit": self.net_profit_margin,
            "upper": upper - self.p,
            "theta_c": tc,
            "gamma_C_over_theta_c": upper,
        }


@dataclass(frozen=True)
class RuinEstimate:
    psi: float
    se: float
    horizon: float
    u: float
    z: float | None = None
    tail_bound: float | None = None
    n_reps: int = 0


def _check_light(model: RiskModel) -> dict:
    if not model.law.light_tailed:
        raise RuinConditionError("light-tail analysis needs a claim law with a finite MGF near 0", which="light_tail")
    mg = model.light_tail_margins()
    if not mg["net_profit"] > 0:
        raise RuinConditionError(
            f"net profit condition m E[C] < p fails: m E[C] = {model.m * model.mean_claim:.6g}, p = {model.p}",
            which="net_profit",
        )
    if not mg["upper"] > 0:
        raise RuinConditionError(
            f"condition p < Gamma_C(theta_c)/theta_c fails: Gamma_C(theta_c)/theta_c = "
            f"{mg['gamma_C_over_theta_c']:.6g}, p = {model.p}",
            which="upper",
        )
    return mg


def lundberg_exponent(model: RiskModel) -> float:
    """``theta_dagger``: the positive root of ``Gamma_C(theta) = p theta`` in ``(0, theta_c)``."""
    mg = _check_light(model)
    tc = mg["theta_c"]
    G = lambda th: gamma_C(model.cumulant, model.law, th) - model.p * th
    hi = tc
    if math.isinf(hi):
        hi = 1.0
        while G(hi) <= 0:
            hi *= 2
    while not math.isfinite(G(hi)):
        # the claim MGF blows up at theta_c; back off until finite
        hi = hi * (1 - 1e-9) if hi < 1 else hi - 1e-9 * hi
    res = optimize.minimize_scalar(G, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-14})
    lo = res.x
    if not G(lo) < 0:
        raise RuinConditionError("Gamma_C(theta) - p theta has no negative dip", which="net_profit")
    root = optimize.brentq(G, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return float(root)


def knee(model: RiskModel, theta_dagger: float | None = None) -> float:
    """``1 / (Gamma_C'(theta_dagger) - p)``."""
    td = lundberg_exponent(model) if theta_dagger is None else theta_dagger
    h = 1e-6 * max(1.0, td)
    return 1.0 / (gamma_C_prime(model.cumulant, model.law, td, h) - model.p)


def finite_horizon_rate(model: RiskModel, z: float, theta_dagger: float | None = None) -> float:
    """``w(z)`` for the decay of the ruin probability before time ``u z``."""
    if not z > 0:
        raise ValidationError("z must be positive")
    td = lundberg_exponent(model) if theta_dagger is None else theta_dagger
    if z >= knee(model, td):
        return td
    return z * rate_IC(model.cumulant, model.law, 1.0 / z + model.p)


def heavy_tail_asymptote(model: RiskModel, horizon: float | None = None, *, z: float | None = None,
                         family: str | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """``u -> c(horizon) * Bbar0(u)`` for subexponential claims.

    ``c = m E[C] / (p - m E[C])`` for the infinite horizon. For a finite horizon
    parameter ``T`` (also accepted as ``z``) the constant is multiplied by
    ``1 - (1 + (1 - m E[C]/p) T/alpha)**-alpha`` for regularly varying claim tails
    and ``1 - exp(-(1 - m E[C]/p) T)`` for the Gumbel class.
    """
    law = model.law
    if law.light_tailed:
        raise ValidationError("heavy-tail asymptotics need a subexponential claim law")
    if not model.net_profit_margin > 0:
        raise RuinConditionError("net profit condition m E[C] < p fails", which="net_profit")
    T = z if horizon is None else horizon
    mE = model.m * model.mean_claim
    c = mE / (model.p - mE)
    if T is not None and not math.isinf(T):
        q = 1 - mE / model.p
        family = family or ("frechet" if hasattr(law, "alpha") else "gumbel")
        if family == "frechet":
            a = law.alpha
            c *= 1 - (1 + q * T / a) ** (-a)
        elif family == "gumbel":
            c *= 1 - math.exp(-q * T)
        else:
            raise ValidationError(f"unknown heavy-tail class {family!r}")
    cst = c

    def curve(u):
        u = np.atleast_1d(np.asarray(u, float))
        return cst * np.array([law.integrated_tail(x) for x in u])

    curve.constant = cst
    return curve


# ------------------------------------------------------------------ Monte Carlo


def default_horizon(model: RiskModel, u: float) -> float:
    """``max(50 / (p - m E[C]), 20 u / p)``."""
    margin = model.net_profit_margin
    base = 50.0 / margin if margin > 0 else 50.0 / model.p
    return max(base, 20.0 * u / model.p)


def _path_minima(times, paths, offsets, claims, p, horizons, n_paths):
    """Per path and horizon: minimum of ``p t - S_t`` over claim epochs ``t <= horizon``."""
    S = np.cumsum(claims)
    start = np.repeat(np.concatenate([[0.0], S])[offsets[:-1]], np.diff(offsets))
    level = p * times - (S - start)
    out = np.full((len(horizons), n_paths), INF)
    nonempty = np.diff(offsets) > 0
    for k, H in enumerate(horizons):
        lv = np.where(times <= H, level, INF)
        if lv.size:
            mins = np.minimum.reduceat(lv, offsets[:-1][nonempty])
            out[k, nonempty] = mins
    return out


def ruin_curve(model: RiskModel, us: Sequence[float], n_reps: int, rng=0, horizon=None, z=None,
               tol: float = 1e-6, max_events_per_chunk: int = 4_000_000) -> list[RuinEstimate]:
    """Ruin frequencies for several initial reserves from one shared set of paths.

    ``horizon`` fixes a common time horizon; ``z`` gives horizon ``u z`` per reserve;
    with neither, the infinite-horizon truncation :func:`default_horizon` of the
    largest reserve is used and, for light tails, the unseen tail is estimated by
    the mean of ``exp(-theta_dagger R_H)`` over surviving paths.
    """
    us = np.asarray(us, float)
    if np.any(us < 0) or n_reps < 1:
        raise ValidationError("reserves must be >= 0 and n_reps >= 1")
    if z is not None:
        horizons = [float(u * z) for u in us]
    elif horizon is not None:
        horizons = [float(horizon)] * us.size
    else:
        horizons = [default_horizon(model, float(us.max()))] * us.size
    H = max(max(horizons), 1e-12)
    td = None
    if horizon is None and z is None and model.law.light_tailed:
        try:
            td = lundberg_exponent(model)
        except RuinConditionError:
            td = None
    gen = _as_generator(rng)
    rate = max(model.m, model.arrival.mean_rate, 1e-9)
    chunk = max(1, min(n_reps, int(max_events_per_chunk / (rate * H + 1))))
    ruined = np.zeros(us.size)
    tail = np.zeros(us.size)
    done = 0
    while done < n_reps:
        n = min(chunk, n_reps - done)
        batch = simulate_batch(model.arrival, H, n, gen, tol)
        claims = model.law.sample(gen, batch.times.size)
        mins = _path_minima(batch.times, batch.paths, batch.offsets, claims, model.p,
                                      sorted(set(horizons)), n)
        hidx = {h: k for k, h in enumerate(sorted(set(horizons)))}
        if td is not None:
            total = np.add.reduceat(claims, batch.offsets[:-1]) if claims.size else np.zeros(n)
            total = np.where(np.diff(batch.offsets) > 0, total, 0.0)
        for i, u in enumerate(us):
            hit = mins[hidx[horizons[i]]] <= -u
            ruined[i] += hit.sum()
            if td is not None:
                R_H = u + model.p * H - total
                tail[i] += np.exp(-td * R_H[~hit]).sum()
        done += n
    out = []
    for i, u in enumerate(us):
        psi = ruined[i] / n_reps
        se = math.sqrt(psi * (1 - psi) / n_reps)
        tb = tail[i] / n_reps if td is not None else None
        out.append(RuinEstimate(psi, se, horizons[i], float(u), z, tb, n_reps))
    return out


def simulate_ruin(model: RiskModel, horizon=None, n_reps: int = 10_000, rng=0, *, z=None, tol=1e-6) -> RuinEstimate:
    """Binomial ruin estimate at reserve ``model.u``."""
    return ruin_curve(model, [model.u], n_reps, rng, horizon=horizon, z=z, tol=tol)[0]
