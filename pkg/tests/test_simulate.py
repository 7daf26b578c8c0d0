import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import classical_seq, even_odd_seq, poisson_seq, three_cycle_seq
from hawkesgen.errors import NoEnvelopeError, TruncationError, ValidationError
from hawkesgen.kernels import Constant, Exponential, Extension, KernelSequence, PiecewiseConstant, Tabulated
from hawkesgen.simulate import (
    RngStream,
    count_samples,
    replicate,
    residual_bound,
    simulate_batch,
    simulate_branching,
    simulate_thinning,
    truncation_depth,
)


def test_poisson_count_band():
    counts = count_samples(poisson_seq(), 1000.0, 400, 3)
    assert abs(counts.mean() - 1000) < 3 * math.sqrt(1000) / math.sqrt(400) * 2


def test_classical_lln():
    log = simulate_branching(classical_seq(), 2000.0, RngStream(1))
    assert log.n_events / 2000 == pytest.approx(2.0, abs=0.15)


def test_even_odd_lln():
    counts = count_samples(even_odd_seq(level=2.0), 2000.0, 20, 4)
    assert counts.mean() / 2000 == pytest.approx(24 / 7, abs=0.05)


def test_event_log_invariants_hold():
    for seq in (classical_seq(), even_odd_seq(), three_cycle_seq()):
        log = simulate_branching(seq, 200.0, RngStream(9), tol=1e-6)
        log.validate(tol=1e-6)
        assert log.truncation_bound == pytest.approx(residual_bound(seq, 200.0, log.M_used))


def test_truncation_bound_formula():
    seq = classical_seq()
    M = truncation_depth(seq, 100.0, 1e-6)
    assert 100 * 0.5 ** (M + 1) / 0.5 < 1e-6 <= 100 * 0.5**M / 0.5


def test_truncation_cap_reports_achievable_bound():
    with pytest.raises(TruncationError) as err:
        truncation_depth(classical_seq(), 100.0, 1e-300, cap=50)
    assert err.value.achievable_bound == pytest.approx(residual_bound(classical_seq(), 100.0, 50))


def test_null_extension_stops_at_K():
    seq = KernelSequence(Constant(1.0), (Exponential(2.0, 1.0),), Extension.NULL)
    log = simulate_branching(seq, 500.0, 2)
    assert log.generations.max() <= 1 and log.truncation_bound == 0.0


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        simulate_branching(classical_seq(), -1.0)
    with pytest.raises(ValidationError):
        truncation_depth(classical_seq(), 10.0, 0.0)


def test_determinism_bitwise():
    a = simulate_branching(classical_seq(), 300.0, RngStream(42, 3))
    b = simulate_branching(classical_seq(), 300.0, RngStream(42, 3))
    assert a.to_csv() == b.to_csv()
    c = simulate_branching(classical_seq(), 300.0, RngStream(42, 4))
    assert a.to_csv() != c.to_csv()


def test_csv_format(tmp_path):
    log = simulate_branching(classical_seq(), 5.0, 1)
    path = tmp_path / "ev.csv"
    text = log.to_csv(path)
    assert path.read_text() == text
    lines = text.splitlines()
    assert lines[0] == "time,generation"
    assert all(len(line.split(",")[0].split(".")[1]) == 9 for line in lines[1:])


def test_replicate_stream_zero_matches_single_run():
    seq = classical_seq()
    s = replicate(seq, 1, T=100.0, seed=5)
    log = simulate_branching(seq, 100.0, RngStream(5, 0))
    assert s[0].N_T == log.n_events and s[0].stream == 0


def test_replicate_deterministic_and_parallel_order():
    seq = classical_seq()
    a = replicate(seq, 6, T=50.0, seed=8)
    b = replicate(seq, 6, T=50.0, seed=8, workers=2)
    assert a == b
    assert [s.stream for s in a] == list(range(6))


def test_replicate_clt_band():
    seq = classical_seq()
    s = replicate(seq, 1000, T=100.0, seed=1)
    rate = np.array([x.N_T for x in s]) / 100.0
    assert abs(rate.mean() - 2.0) < 4 * math.sqrt(8 / 100) / math.sqrt(1000) + 0.02


def test_generation_counts_follow_rates():
    seq = even_odd_seq()
    T = 400.0
    batch = simulate_batch(seq, T, 300, 6)
    counts = np.zeros(5)
    for k in range(batch.n_paths):
        g = batch.path(k)[1]
        counts += np.bincount(g, minlength=5)[:5]
    rates = counts / (batch.n_paths * T)
    expect = np.array([1, 0.5, 0.125, 0.0625, 0.015625])
    # edge loss near T is O(1/T) per generation
    np.testing.assert_allclose(rates, expect, rtol=0.05, atol=0.005)


@pytest.mark.parametrize("seq", [poisson_seq(), classical_seq(), three_cycle_seq()],
                         ids=["poisson", "classical", "three-cycle"])
def test_thinning_matches_branching(seq):
    T, n = 100.0, 300
    a = count_samples(seq, T, n, 11)
    b = np.array([simulate_thinning(seq, T, RngStream(12, k)).n_events for k in range(n)])
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_thinning_max_gen_one():
    seq = classical_seq()
    T = 200.0
    n = np.array([simulate_thinning(seq, T, RngStream(3, k), max_gen=1).n_events for k in range(150)])
    assert n.mean() / T == pytest.approx(1.5, abs=4 * math.sqrt(2.0 / T / 150) + 0.01)


def test_thinning_rejects_tabulated():
    seq = KernelSequence(Constant(1.0), (Tabulated(0.1, (1.0, 0.5, 0.0)),), Extension.TAIL_CONSTANT)
    with pytest.raises(NoEnvelopeError):
        simulate_thinning(seq, 10.0)


def test_thinning_log_invariants():
    log = simulate_thinning(even_odd_seq(), 100.0, 4)
    log.validate()


def test_piecewise_baseline_simulation():
    seq = KernelSequence(PiecewiseConstant((50.0,), (2.0, 0.5)), (Exponential(2.0, 1.0),), Extension.TAIL_CONSTANT)
    counts = count_samples(seq, 100.0, 400, 2)
    # immigrants 2*50 + 0.5*50 = 125; each one brings 1 more point on average (minus edge loss)
    assert counts.mean() == pytest.approx(250, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 0.9), st.floats(5.0, 50.0))
def test_branching_log_always_valid(seed, norm, T):
    seq = classical_seq(norm=norm)
    log = simulate_branching(seq, T, seed, tol=1e-6)
    log.validate(tol=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_batch_paths_are_valid(seed):
    batch = simulate_batch(even_odd_seq(), 30.0, 20, seed)
    for k in range(batch.n_paths):
        t, g = batch.path(k)
        assert np.all(np.diff(t) > 0) and np.all((t > 0) & (t <= 30.0))
