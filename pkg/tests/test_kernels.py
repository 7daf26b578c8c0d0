import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hawkesgen.errors import (
    BaselineError,
    GridMismatchError,
    NoEnvelopeError,
    SubcriticalityError,
    ValidationError,
)
from hawkesgen.kernels import (
    Constant,
    ErlangK,
    Exponential,
    Extension,
    GridFunction,
    HeavyTailWarning,
    KernelSequence,
    PiecewiseConstant,
    Tabulated,
    UniformSupport,
    baseline_from_dict,
    classical,
    convolve,
    kernel_from_dict,
    reflect,
)

KERNELS = [
    Exponential(2.0, 1.0),
    ErlangK(2, 3.0, 0.3),
    ErlangK(3, 1.5, 0.6),
    UniformSupport(0.4, 1.0),
    Tabulated(0.01, tuple(np.exp(-2 * 0.01 * np.arange(2000)))),
]


# ------------------------------------------------------------------ kernel families


def test_exponential_norm_and_tail():
    k = Exponential(2.0, 1.0)
    assert k.l1_norm() == 0.5
    assert k.tail_integral(math.log(2) / 2) == pytest.approx(0.25, rel=1e-14)


def test_uniform_first_moment():
    assert UniformSupport(1.0, 1.0).first_moment() == pytest.approx(0.5, rel=1e-14)


def test_erlang_first_moment():
    # weight 1 Erlang(2, rate 2) has mean 1
    assert ErlangK(2, 2.0, 1.0).first_moment() == pytest.approx(1.0, rel=1e-14)


def test_tabulated_sampled_exponential_norm():
    k = Tabulated(1e-3, tuple(np.exp(-2 * 1e-3 * np.arange(20001))))
    assert k.l1_norm() == pytest.approx(0.5, abs=1e-6)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.family)
def test_l1_norm_matches_quadrature(k):
    top = k.truncation_length()
    val, _ = integrate.quad(lambda t: float(k(t)), 0, top, limit=500, points=[min(1.0, top)])
    assert val == pytest.approx(k.l1_norm(), rel=1e-6)


@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.family)
def test_cumulative_plus_tail_is_norm(k):
    t = np.linspace(0, 3, 31)
    np.testing.assert_allclose(k.cumulative(t) + k.tail_integral(t), k.l1_norm(), rtol=1e-12)


@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.family)
def test_truncation_length_tail_is_small(k):
    L = k.truncation_length()
    assert float(k.tail_integral(L)) <= 1e-10 * k.l1_norm() * (1 + 1e-6)


@pytest.mark.parametrize("k", KERNELS[:4], ids=lambda k: k.family)
def test_envelope_dominates_and_is_monotone(k):
    t = np.linspace(0, 5, 2001)
    env = k.envelope(t)
    assert np.all(env >= k(t) - 1e-15)
    assert np.all(np.diff(env) <= 1e-15)


def test_tabulated_has_no_envelope():
    with pytest.raises(NoEnvelopeError):
        Tabulated(0.1, (1.0, 0.5, 0.0)).envelope(0.0)


def test_tabulated_heavy_tail_warning():
    with pytest.warns(HeavyTailWarning):
        Tabulated(0.1, tuple(np.ones(100) * 0.01)).first_moment()


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.family)
def test_sampler_matches_restricted_density(k):
    rng = np.random.default_rng(5)
    upper = 0.8
    x = k.sample(rng, np.full(40000, upper))
    assert np.all((x >= 0) & (x <= upper))
    mean_exact = integrate.quad(lambda t: t * float(k(t)), 0, upper, points=[0.5])[0] / float(k.cumulative(upper))
    assert x.mean() == pytest.approx(mean_exact, abs=4 * x.std() / math.sqrt(x.size))


@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.family)
def test_kernel_dict_round_trip(k):
    assert kernel_from_dict(k.to_dict()) == k


def test_kernel_validation():
    with pytest.raises(ValidationError):
        Exponential(-1.0, 1.0)
    with pytest.raises(ValidationError):
        UniformSupport(1.0, 0.0)
    with pytest.raises(ValidationError):
        Tabulated(0.1, (1.0, -1.0))
    with pytest.raises(ValidationError):
        kernel_from_dict({"family": "powerlaw"})


# ------------------------------------------------------------------ baselines


def test_piecewise_baseline_requires_final_level():
    with pytest.raises(BaselineError, match="final level"):
        PiecewiseConstant((1.0, 2.0), (1.0, 2.0))


def test_piecewise_baseline_integral_and_mean_rate():
    b = PiecewiseConstant((1.0, 3.0), (2.0, 0.5, 1.0))
    assert b.integral(4.0) == pytest.approx(2.0 + 1.0 + 1.0)
    assert b.mean_rate() == 1.0
    assert b.sup_from(0.0) == 2.0 and b.sup_from(1.5) == 1.0


def test_piecewise_baseline_sampling_counts():
    b = PiecewiseConstant((5.0,), (3.0, 1.0))
    rng = np.random.default_rng(0)
    counts = np.array([b.sample(rng, 10.0).size for _ in range(4000)])
    assert counts.mean() == pytest.approx(20.0, abs=4 * math.sqrt(20 / 4000))


def test_constant_baseline_rejects_nonpositive():
    with pytest.raises(BaselineError):
        Constant(0.0)


def test_baseline_dict_round_trip():
    for b in (Constant(1.5), PiecewiseConstant((1.0,), (2.0, 0.0))):
        assert baseline_from_dict(b.to_dict()) == b


# ------------------------------------------------------------------ sequences


def test_subcriticality_names_generation():
    with pytest.raises(SubcriticalityError) as err:
        KernelSequence(Constant(1.0), (Exponential(1.0, 0.5), Exponential(1.0, 1.2)), Extension.CYCLIC)
    assert err.value.generation == 2
    assert err.value.norm == pytest.approx(1.2)


def test_extension_slots():
    k1, k2, k3 = Exponential(1, 0.1), Exponential(1, 0.2), Exponential(1, 0.3)
    cyc = KernelSequence(Constant(1.0), (k1, k2, k3), Extension.CYCLIC)
    assert [cyc.kernel_at(n) for n in (1, 2, 3, 4, 5)] == [k1, k2, k3, k1, k2]
    tail = KernelSequence(Constant(1.0), (k1, k2), Extension.TAIL_CONSTANT)
    assert [tail.kernel_at(n) for n in (1, 2, 3, 9)] == [k1, k2, k2, k2]
    null = KernelSequence(Constant(1.0), (k1,), Extension.NULL)
    assert null.kernel_at(2) is None and null.norm_at(2) == 0.0


def test_structure_is_prefix_plus_cycle():
    seq = KernelSequence(Constant(1.0), (Exponential(1, 0.1), Exponential(1, 0.2)), Extension.TAIL_CONSTANT)
    pre, cyc = seq.structure()
    np.testing.assert_allclose(pre, [0.1])
    np.testing.assert_allclose(cyc, [0.2])


def test_sequence_dict_round_trip():
    seq = KernelSequence(Constant(2.0), (Exponential(2, 1), ErlangK(2, 3.0, 0.3)), Extension.CYCLIC)
    assert KernelSequence.from_dict(seq.to_dict()) == seq


def test_rho_and_eta():
    seq = classical(1.0, Exponential(0.5, 0.25))
    assert seq.rho == 0.5 and seq.eta == pytest.approx(1.0)


# ------------------------------------------------------------------ grid functions


def test_indicator_self_convolution_is_triangle():
    f = GridFunction(1e-3, np.ones(1001))
    c = convolve(f, f)
    assert c(1.0) == pytest.approx(1.0, abs=1e-12)
    assert c.integral() == pytest.approx(1.0, abs=1e-9)


def test_exponential_convolution_matches_closed_form():
    step = 1e-3
    g = Exponential(2.0, 1.0).tabulate(step, 20.0)
    c = convolve(g, g)
    t = np.linspace(0, 5, 51)
    np.testing.assert_allclose(c(t), t * np.exp(-2 * t), atol=1e-6)


def _trapezoid_reference(a, b, step, k):
    lo, hi = max(0, k - b.size + 1), min(k, a.size - 1)
    terms = np.array([a[i] * b[k - i] for i in range(lo, hi + 1)])
    return step * (terms.sum() - 0.5 * (terms[0] + terms[-1]))


@pytest.mark.parametrize("n1,n2", [(40, 30), (400, 300)])
def test_convolution_matches_explicit_trapezoid(n1, n2):
    rng = np.random.default_rng(1)
    a, b = rng.random(n1), rng.random(n2)
    c = convolve(GridFunction(0.1, a), GridFunction(0.1, b))
    assert c.values.size == n1 + n2 - 1
    for k in (0, 1, n2 // 2, n2, n1 + n2 - 2):
        assert c.values[k] == pytest.approx(_trapezoid_reference(a, b, 0.1, k), rel=1e-10, abs=1e-12)


def test_convolution_step_mismatch():
    with pytest.raises(GridMismatchError):
        convolve(GridFunction(0.1, np.ones(3)), GridFunction(0.2, np.ones(3)))


def test_reflect_and_origin():
    f = GridFunction(0.5, np.array([1.0, 2.0, 3.0]), 1.0)
    r = reflect(f)
    assert r.origin == -2.0
    np.testing.assert_allclose(r(np.array([-2.0, -1.5, -1.0])), [3.0, 2.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.05, 0.95), st.floats(0.2, 5.0), st.floats(0.05, 0.95))
def test_convolution_mass_is_product_of_masses(r1, n1, r2, n2):
    step = 1e-3
    f = Exponential(r1, n1 * r1).tabulate(step)
    g = Exponential(r2, n2 * r2).tabulate(step)
    assert convolve(f, g).integral() == pytest.approx(n1 * n2, rel=5e-4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5), st.sampled_from(list(Extension)))
def test_norm_sequence_follows_structure(norms, ext):
    seq = KernelSequence(Constant(1.0), tuple(Exponential(1.0, a) for a in norms), ext)
    pre, cyc = seq.structure()
    L, K = pre.size, cyc.size
    for n in range(1, 25):
        expect = pre[n - 1] if n <= L else cyc[(n - 1 - L) % K]
        assert seq.norm_at(n) == pytest.approx(expect)
