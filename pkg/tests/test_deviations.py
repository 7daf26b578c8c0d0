import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from conftest import classical_seq, even_odd_seq, poisson_seq, three_cycle_seq
from hawkesgen.analytics import limit_constants
from hawkesgen.deviations import (
    CumulantModel,
    Deterministic,
    ExponentialClaims,
    GammaClaims,
    LogNormalClaims,
    ParetoClaims,
    WeibullClaims,
    claim_law_from_dict,
    classical_rate,
    empirical_cumulant,
    gamma_C,
    log_mean_exp,
    min_root,
    rate_IC,
    rate_J,
    theta_c_compound,
)
from hawkesgen.errors import NoSolutionError, ValidationError

MODELS = {
    "classical": classical_seq(),
    "even-odd": even_odd_seq(),
    "three-cycle": three_cycle_seq(),
}


# ------------------------------------------------------------------ recursion and cumulant


@pytest.mark.parametrize("h", [0.1, 0.3, 0.5, 0.8])
def test_theta_c_classical(h):
    cm = CumulantModel(classical_seq(norm=h))
    assert cm.theta_c() == pytest.approx(h - 1 - math.log(h), abs=1e-8)


def test_straddle_at_theta_c():
    cm = CumulantModel(classical_seq())
    tc = cm.theta_c()
    assert math.isfinite(cm.f_iterate(tc - 1e-6))
    assert cm.f_iterate(tc + 1e-6) == math.inf
    assert math.isfinite(cm.f_limit(tc - 1e-6)) and cm.f_limit(tc + 1e-6) == math.inf


def test_f_at_theta_c_is_log_inverse_norm():
    cm = CumulantModel(classical_seq())
    assert cm.f_limit(cm.theta_c()) == pytest.approx(math.log(2), abs=1e-5)
    assert cm.gamma(cm.theta_c()) == pytest.approx(1.0, abs=1e-5)


def test_classical_gamma_matches_min_root():
    cm = CumulantModel(classical_seq())
    for th in (-2.0, -0.5, 0.0, 0.1, 0.19):
        x = min_root(th, 0.5)
        assert cm.gamma(th) == pytest.approx(math.expm1(x), rel=1e-10, abs=1e-14)


def test_f_M_converges_to_limit():
    cm = CumulantModel(even_odd_seq())
    for th in (-0.3, 0.2):
        vals = [cm.f_M(th, M) for M in (2, 10, 40, 80)]
        assert abs(vals[-1] - cm.f_limit(th)) < 1e-10
        assert abs(vals[0] - cm.f_limit(th)) > abs(vals[-1] - cm.f_limit(th))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(-3.0, 1.0))
def test_fixed_point_matches_brute_iteration(name, frac):
    cm = CumulantModel(MODELS[name])
    tc = cm.theta_c()
    th = frac * tc * 0.98 if frac > 0 else frac
    assert cm.f_limit(th) == pytest.approx(cm.f_iterate(th), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_gamma_zero_and_slope(name):
    seq = MODELS[name]
    cm = CumulantModel(seq)
    assert cm.gamma(0.0) == 0.0
    assert cm.gamma_prime(0.0) == pytest.approx(limit_constants(seq).m, rel=1e-6)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_gamma_second_derivative_is_sigma2(name):
    seq = MODELS[name]
    cm = CumulantModel(seq)
    h = 1e-4
    d2 = (cm.gamma(h) - 2 * cm.gamma(0.0) + cm.gamma(-h)) / h**2
    assert d2 == pytest.approx(limit_constants(seq).sigma2, rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(-2.0, 0.95), st.floats(-2.0, 0.95), st.floats(0, 1))
def test_gamma_is_convex(name, a, b, w):
    cm = CumulantModel(MODELS[name])
    tc = cm.theta_c()
    a, b = min(a, 0.95) * (tc if a > 0 else 1), min(b, 0.95) * (tc if b > 0 else 1)
    mid = w * a + (1 - w) * b
    assert cm.gamma(mid) <= w * cm.gamma(a) + (1 - w) * cm.gamma(b) + 1e-12


def test_poisson_has_infinite_theta_c():
    cm = CumulantModel(poisson_seq(2.0))
    assert cm.theta_c() == math.inf
    assert cm.gamma(1.0) == pytest.approx(2.0 * math.expm1(1.0))


def test_even_odd_theta_c_is_blow_up_of_two_step_map():
    cm = CumulantModel(even_odd_seq())
    tc = cm.theta_c()
    assert cm.f_iterate(tc * (1 - 1e-7)) < math.inf
    assert cm.f_iterate(tc * (1 + 1e-7)) == math.inf


def test_min_root_edge_cases():
    assert min_root(0.0, 0.5) == 0.0
    assert min_root(-1.0, 0.0) == -1.0
    with pytest.raises(NoSolutionError):
        min_root(0.5, 0.5)
    with pytest.raises(ValidationError):
        min_root(0.1, 1.0)


# ------------------------------------------------------------------ rate functions


def test_rate_matches_classical_closed_form():
    cm = CumulantModel(classical_seq())
    xs = np.linspace(0.05, 6, 50)
    err = max(abs(cm.rate_I(x) - classical_rate(x, 1.0, 0.5)) for x in xs)
    assert err < 1e-6


def test_rate_zero_at_mean_and_infinite_below_zero():
    for seq in MODELS.values():
        cm = CumulantModel(seq)
        assert cm.rate_I(limit_constants(seq).m) == pytest.approx(0.0, abs=1e-9)
        assert cm.rate_I(-0.1) == math.inf
        assert cm.rate_I(0.0) == pytest.approx(seq.mean_rate)


def test_poisson_rate_closed_form():
    cm = CumulantModel(poisson_seq(1.0))
    assert cm.rate_I(2.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(0.05, 8.0), st.floats(-2.0, 0.99))
def test_rate_dominates_every_linear_bound(name, x, frac):
    cm = CumulantModel(MODELS[name])
    th = frac * cm.theta_c() if frac > 0 else frac
    assert cm.rate_I(x) >= th * x - cm.gamma(th) - 1e-9


def test_rate_J():
    assert rate_J(limit_constants(classical_seq()), 1.0) == pytest.approx(1 / 16)
    assert rate_J(8.0, 2.0) == pytest.approx(0.25)
    with pytest.raises(ValidationError):
        rate_J(0.0, 1.0)


# ------------------------------------------------------------------ claim laws

LAWS = [
    Deterministic(1.5),
    ExponentialClaims(2.0),
    GammaClaims(2.0, 0.5),
    ParetoClaims(1.5, 1.0),
    WeibullClaims(0.5, 1.0),
    LogNormalClaims(0.0, 0.5),
]


@pytest.mark.parametrize("law", LAWS, ids=lambda law: type(law).__name__)
def test_sample_mean(law):
    x = law.sample(np.random.default_rng(3), 200_000)
    tol = 5 * x.std() / math.sqrt(x.size) + 1e-12
    if isinstance(law, ParetoClaims):
        tol = 0.05  # infinite variance
    assert x.mean() == pytest.approx(law.mean(), abs=tol)


@pytest.mark.parametrize("law", LAWS, ids=lambda law: type(law).__name__)
def test_integrated_tail_properties(law):
    xs = [0.0, 0.5, 1.0, 3.0, 10.0]
    vals = [law.integrated_tail(x) for x in xs]
    assert vals[0] == pytest.approx(1.0, abs=1e-8)
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_integrated_tail_closed_forms():
    assert ParetoClaims(1.5, 2.0).integrated_tail(4.0) == pytest.approx(3.0**-1.5)
    # shape 1/2, scale 1: int_x^inf e^{-sqrt y} dy / 2 = Gamma(2, sqrt x) / Gamma(2)
    assert WeibullClaims(0.5, 1.0).integrated_tail(3.0) == pytest.approx(special.gammaincc(2, math.sqrt(3)), rel=1e-8)
    assert GammaClaims(1.0, 2.0).integrated_tail(1.0) == pytest.approx(math.exp(-0.5), rel=1e-8)


@pytest.mark.parametrize("law", LAWS, ids=lambda law: type(law).__name__)
def test_log_mgf_at_negative_theta(law):
    x = law.sample(np.random.default_rng(4), 400_000)
    assert law.log_mgf(-0.3) == pytest.approx(math.log(np.mean(np.exp(-0.3 * x))), abs=3e-3)


def test_light_tail_log_mgf_closed_forms():
    assert ExponentialClaims(2.0).log_mgf(0.25) == pytest.approx(-math.log(0.5))
    assert GammaClaims(2.0, 0.5).log_mgf(1.0) == pytest.approx(-2 * math.log(0.5))
    assert ExponentialClaims(2.0).log_mgf(0.5) == math.inf
    assert ParetoClaims(1.5, 1.0).log_mgf(0.1) == math.inf


@pytest.mark.parametrize("law", LAWS, ids=lambda law: type(law).__name__)
def test_claim_dict_round_trip(law):
    assert claim_law_from_dict(law.to_dict()) == law


def test_claim_law_validation():
    with pytest.raises(ValidationError):
        WeibullClaims(1.5, 1.0)
    with pytest.raises(ValidationError):
        claim_law_from_dict({"family": "cauchy"})
    with pytest.raises(ValidationError):
        claim_law_from_dict({"family": "pareto", "alpha": 1.0})


def test_compound_cumulant_exponential_claims():
    cm = CumulantModel(classical_seq())
    law = ExponentialClaims(0.5)
    th = 0.1
    assert gamma_C(cm, law, th) == pytest.approx(cm.gamma(-math.log1p(-0.5 * th)), rel=1e-14)


def test_compound_theta_c():
    cm = CumulantModel(classical_seq())
    assert theta_c_compound(cm, Deterministic(2.0)) == pytest.approx(cm.theta_c() / 2)
    law = ExponentialClaims(0.5)
    tc = theta_c_compound(cm, law)
    assert law.log_mgf(tc) == pytest.approx(cm.theta_c(), rel=1e-10)
    assert theta_c_compound(cm, ParetoClaims(1.5, 1.0)) == 0.0


def test_compound_rate_zero_at_mean():
    cm = CumulantModel(classical_seq())
    law = GammaClaims(2.0, 0.5)
    assert rate_IC(cm, law, 2.0 * law.mean()) == pytest.approx(0.0, abs=1e-8)


# ------------------------------------------------------------------ empirical cumulant


def test_log_mean_exp_is_stable():
    full, loo = log_mean_exp(np.array([1000.0, 1000.0]))
    assert full == pytest.approx(1000.0)
    np.testing.assert_allclose(loo, 1000.0)


def test_empirical_cumulant_poisson():
    rng = np.random.default_rng(0)
    t = 50.0
    counts = rng.poisson(t, 20000)
    est, se = empirical_cumulant(counts, 0.2, t)
    assert abs(est - math.expm1(0.2)) < 4 * se
    assert empirical_cumulant(counts, 0.0, t) == (0.0, 0.0)


def test_jackknife_se_matches_delta_method():
    rng = np.random.default_rng(1)
    x = rng.normal(size=5000)
    _, se = empirical_cumulant(x, 0.5, 1.0)
    w = np.exp(0.5 * x)
    delta = w.std(ddof=1) / w.mean() / math.sqrt(x.size)
    assert se == pytest.approx(delta, rel=0.02)
