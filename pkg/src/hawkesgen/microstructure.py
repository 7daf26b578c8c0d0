"""Generation-pair product densities, signature plots and the Epps correlation curve."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytics import PartitionSpec, generation_rates
from .errors import BaselineError, PartitionError, ValidationError
from .kernels import GridFunction, KernelSequence, convolve, reflect
from .simulate import EventLog, _as_generator, simulate_batch

DEFAULT_STEP = 1e-2


def _window(f: GridFunction, L: float) -> np.ndarray:
    """Values of ``f`` on the symmetric lag grid ``-L..L`` (zero off its support)."""
    n = int(round(L / f.step))
    out = np.zeros(2 * n + 1)
    shift = int(round(f.origin / f.step)) + n
    lo, hi = max(0, shift), min(2 * n + 1, shift + f.values.size)
    if hi > lo:
        out[lo:hi] = f.values[lo - shift : hi - shift]
    return out


@dataclass(frozen=True, eq=False)
class CovarianceTable:
    """Stationary product densities ``rho(i, j, x)`` for generations ``0 <= i <= j <= n_max``.

    ``x = t - s`` is the lag between a generation-``i`` point at ``t`` and a
    generation-``j`` point at ``s``. Only the covariance part
    ``kappa(i, j, x) = rho(i, j, x) - r_i r_j`` is stored, on the grid
    ``-L, ..., L``; ``r_i`` is the stationary rate of generation ``i``. The
    diagonal atom ``r_i delta(x)`` of same-generation pairs is kept apart.
    """

    step: float
    L: float
    n_max: int
    rates: np.ndarray
    kappa: dict
    truncation_bound: float
    lags: np.ndarray = field(init=False)

    def __post_init__(self):
        n = int(round(self.L / self.step))
        object.__setattr__(self, "lags", self.step * np.arange(-n, n + 1))

    def kappa_values(self, i: int, j: int) -> np.ndarray:
        if i <= j:
            return self.kappa[(i, j)]
        return self.kappa[(j, i)][::-1]

    def rho(self, i: int, j: int, x):
        """Product density (atom at 0 excluded), interpolated at lags ``x``."""
        return self.rates[i] * self.rates[j] + np.interp(x, self.lags, self.kappa_values(i, j), left=0.0, right=0.0)

    def weighted_integral(self, i: int, j: int, tau: float, n_nodes: int = 4001) -> float:
        """``int_{-tau}^{tau} (tau - |x|) kappa(i, j, x) dx``."""
        x = np.linspace(-tau, tau, n_nodes)
        y = (tau - np.abs(x)) * np.interp(x, self.lags, self.kappa_values(i, j), left=0.0, right=0.0)
        return float(np.trapezoid(y, x))

    def to_csv(self, path=None, every: int = 1) -> str:
        buf = io.StringIO()
        buf.write("i,j,lag,value\n")
        for (i, j), k in sorted(self.kappa.items()):
            rr = self.rates[i] * self.rates[j]
            for x, v in zip(self.lags[::every], k[::every]):
                buf.write(f"{i},{j},{x:.9f},{rr + v:.9f}\n")
        text = buf.getvalue()
        if path is not None:
            from .simulate import _atomic_write

            _atomic_write(path, text)
        return text


def pair_bound(gbar: float, rho: float, n_max: int) -> float:
    """``gbar**2 (n_max + 2) rho**n_max / (1 - rho)**2``."""
    if rho == 0:
        return 0.0
    return gbar**2 * (n_max + 2) * rho**n_max / (1 - rho) ** 2


def covariance_table(seq: KernelSequence, n_max: int | None = None, step: float = DEFAULT_STEP,
                     L: float | None = None, tol: float = 1e-8) -> CovarianceTable:
    """Grid evaluation of the generation-pair recursions.

    Same generation: ``kappa(i,i) = A_i * (kappa(i-1,i-1) + r_{i-1} delta)`` with
    ``A_i`` the autocorrelation of ``gamma_i`` and ``kappa(0,0) = 0``.
    Later generation ``j > i``: ``kappa(i,j) = g_j * kappa(i,j-1)`` where ``g_j`` is
    ``gamma_j`` reflected in time, started from ``kappa(i,i) + r_i delta``.
    """
    if not seq.baseline.is_constant:
        raise BaselineError("covariance tables need a constant (stationary) baseline")
    gbar, rho = seq.mean_rate, seq.rho
    longest = max((k.truncation_length() for k in seq.explicit), default=0.0)
    if L is None:
        L = max(2 * longest, 10 * step)
    elif L < 2 * longest:
        raise ValidationError(f"max lag L = {L} is shorter than twice the longest kernel length {longest:.4g}")
    if n_max is None:
        n_max = 0
        while pair_bound(gbar, rho, n_max) >= tol and n_max < 500:
            n_max += 1
    rates = generation_rates(seq, n_max)
    n = int(round(L / step))
    kappa = {(0, 0): np.zeros(2 * n + 1)}
    grids = {}
    for g in range(1, n_max + 1):
        k = seq.kernel_at(g)
        if k is None:
            grids[g] = None
            continue
        kg = k.tabulate(step, min(k.truncation_length(), L))
        grids[g] = (reflect(kg), convolve(kg, reflect(kg)))

    for i in range(1, n_max + 1):
        gi = grids[i]
        if gi is None:
            kappa[(i, i)] = np.zeros(2 * n + 1)
            continue
        _, A = gi
        prev = GridFunction(step, kappa[(i - 1, i - 1)], -L)
        kii = _window(convolve(A, prev), L) + rates[i - 1] * _window(A, L)
        kappa[(i, i)] = 0.5 * (kii + kii[::-1])
    for i in range(0, n_max + 1):
        for j in range(i + 1, n_max + 1):
            gj = grids[j]
            if gj is None:
                kappa[(i, j)] = np.zeros(2 * n + 1)
                continue
            rj, _ = gj
            prev = GridFunction(step, kappa[(i, j - 1)], -L)
            kij = _window(convolve(rj, prev), L)
            if j == i + 1:
                atom = _window(rj, L)
                # the jump at lag 0 is stored as its two-sided average
                atom[n] *= 0.5
                kij = kij + rates[i] * atom
            kappa[(i, j)] = kij
    return CovarianceTable(step, L, n_max, rates, kappa, pair_bound(gbar, rho, n_max))


def _signs(part: PartitionSpec, n: int, plus: int, minus: int | None) -> np.ndarray:
    cls = part.classes(n)
    s = np.where(cls == plus, 1.0, 0.0)
    if minus is not None:
        s -= np.where(cls == minus, 1.0, 0.0)
    return s


def second_moment_matrix(table: CovarianceTable, tau: float) -> np.ndarray:
    """``E[N^i_tau N^j_tau]`` for all generation pairs on an interval of length ``tau``."""
    r = table.rates
    n = r.size
    M = np.outer(r, r) * tau * tau + np.diag(r) * tau
    for i in range(n):
        for j in range(i, n):
            w = table.weighted_integral(i, j, tau)
            M[i, j] += w
            if j != i:
                M[j, i] += w
    return M


@dataclass(frozen=True)
class SecondMoments:
    x1x1: float
    x2x2: float | None
    x1x2: float | None
    truncation_bound: float

    @property
    def correlation(self) -> float | None:
        if self.x2x2 is None:
            return None
        den = math.sqrt(self.x1x1 * self.x2x2)
        return self.x1x2 / den if den > 0 else math.nan


def analytic_second_moments(table: CovarianceTable, part: PartitionSpec, tau: float) -> SecondMoments:
    """Non-centred ``E[(X1_tau)^2]``, ``E[(X2_tau)^2]`` and ``E[X1_tau X2_tau]``.

    ``X1 = N_{A1} - N_{A2}`` and, for four classes, ``X2 = N_{A3} - N_{A4}``
    (classes are 0-based: ``A1`` is class 0).
    """
    if part.d not in (1, 2, 4):
        raise PartitionError("price paths need a partition into 2 or 4 classes")
    if tau < 0 or tau > table.L / 2:
        raise ValidationError(f"tau must lie in [0, L/2] = [0, {table.L / 2}]")
    n = table.n_max + 1
    # each generation-pair term is bounded by the table's truncation bound times tau^2 + tau
    bound = table.truncation_bound * (tau * tau + tau)
    if tau == 0:
        return SecondMoments(0.0, 0.0 if part.d == 4 else None, 0.0 if part.d == 4 else None, 0.0)
    M = second_moment_matrix(table, tau)
    a = _signs(part, n, 0, 1 if part.d > 1 else None)
    if part.d < 4:
        return SecondMoments(float(a @ M @ a), None, None, bound)
    b = _signs(part, n, 2, 3)
    return SecondMoments(float(a @ M @ a), float(b @ M @ b), float(a @ M @ b), bound)


# ------------------------------------------------------------------ price paths


@dataclass(frozen=True, eq=False)
class PricePath:
    """``X1 = N_{A1} - N_{A2}`` (and ``X2 = N_{A3} - N_{A4}`` for four classes) on ``[0, T]``.

    With ``second`` given, ``X2`` is read from that independent log instead,
    classified by ``second_part`` when supplied.
    """

    log: EventLog
    part: PartitionSpec
    second: EventLog | None = None
    second_part: PartitionSpec | None = None

    def __post_init__(self):
        if self.part.d not in (2, 4):
            raise PartitionError("price paths need a partition into 2 or 4 classes")

    @property
    def horizon(self) -> float:
        return self.log.horizon

    def _component(self, log: EventLog, part: PartitionSpec, plus: int, minus: int):
        cls = part.classes(int(log.generations.max(initial=0)) + 1)
        c = cls[log.generations] if log.n_events else np.empty(0, int)
        jumps = np.where(c == plus, 1, np.where(c == minus, -1, 0))
        keep = jumps != 0
        return log.times[keep], np.concatenate([[0], np.cumsum(jumps[keep])])

    def values(self, t: np.ndarray, component: int = 1) -> np.ndarray:
        """``X_t`` (right-continuous, ``X_0 = 0``)."""
        if component == 1:
            times, csum = self._component(self.log, self.part, 0, 1)
        else:
            if self.part.d != 4:
                raise PartitionError("second component needs a four-class partition")
            if self.second is None:
                times, csum = self._component(self.log, self.part, 2, 3)
            else:
                times, csum = self._component(self.second, self.second_part or self.part, 2, 3)
        return csum[np.searchsorted(times, t, side="right")]


def stationary_paths(seq: KernelSequence, part: PartitionSpec, T: float, n_paths: int, rng=0,
                     warmup: float | None = None, tol: float = 1e-8, independent_second: bool = False,
                     second_part: PartitionSpec | None = None):
    """Price paths on ``[0, T]`` after discarding a warm-up of length ``warmup``.

    The default warm-up is ten times the longest kernel truncation length. With
    ``independent_second`` the second component comes from an independent copy
    of the process, classified by ``second_part`` if given.
    Returns ``(paths, warmup)``.
    """
    if warmup is None:
        warmup = 10 * max((k.truncation_length() for k in seq.explicit), default=0.0)
    gen = _as_generator(rng)

    def logs():
        batch = simulate_batch(seq, warmup + T, n_paths, gen, tol)
        out = []
        for k in range(n_paths):
            t, g = batch.path(k)
            keep = t > warmup
            out.append(EventLog(T, t[keep] - warmup, g[keep], batch.M_used, batch.truncation_bound))
        return out

    first = logs()
    second = logs() if independent_second else [None] * n_paths
    return [PricePath(a, part, b, second_part) for a, b in zip(first, second)], warmup


def _increments(path: PricePath, tau: float, component: int) -> np.ndarray:
    K = int(math.floor(path.horizon / tau + 1e-9))
    grid = tau * np.arange(K + 1)
    return np.diff(path.values(grid, component))


@dataclass(frozen=True)
class Curve:
    tau: np.ndarray
    value: np.ndarray
    se: np.ndarray
    analytic: np.ndarray | None = None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("tau,empirical,se,analytic\n")
        an = self.analytic if self.analytic is not None else np.full(self.tau.size, np.nan)
        for row in zip(self.tau, self.value, self.se, an):
            buf.write(",".join("nan" if not np.isfinite(v) else f"{v:.9f}" for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            from .simulate import _atomic_write

            _atomic_write(path, text)
        return text


def signature_plot(paths: Sequence[PricePath], taus: Sequence[float], component: int = 1,
                   analytic: Sequence[float] | None = None) -> Curve:
    """``C_hat(tau) = (1/(K tau)) sum_{n<K} (X_{(n+1) tau} - X_{n tau})**2`` with ``K = floor(T/tau)``.

    Averaged over paths; the standard error is the across-path standard deviation
    over ``sqrt(len(paths))``.
    """
    taus = np.asarray(taus, float)
    vals, ses = [], []
    for tau in taus:
        per = []
        for p in paths:
            if tau > p.horizon:
                raise ValidationError("tau must not exceed the path horizon")
            d = _increments(p, tau, component)
            per.append(np.sum(d * d) / (d.size * tau))
        per = np.asarray(per)
        vals.append(per.mean())
        ses.append(per.std(ddof=1) / math.sqrt(per.size) if per.size > 1 else math.inf)
    return Curve(taus, np.asarray(vals), np.asarray(ses), None if analytic is None else np.asarray(analytic, float))


def epps_curve(paths: Sequence[PricePath], taus: Sequence[float], analytic: Sequence[float] | None = None) -> Curve:
    """Pooled ``C12 / sqrt(C1 C2)`` across paths with a leave-one-path-out jackknife SE.

    ``nan`` marks scales where a component shows no movement at all.
    """
    taus = np.asarray(taus, float)
    n = len(paths)
    vals, ses = [], []
    for tau in taus:
        s11, s22, s12 = np.empty(n), np.empty(n), np.empty(n)
        for k, p in enumerate(paths):
            if p.part.d != 4:
                raise PartitionError("the correlation curve needs a four-class partition")
            d1, d2 = _increments(p, tau, 1), _increments(p, tau, 2)
            s11[k], s22[k], s12[k] = d1 @ d1, d2 @ d2, d1 @ d2
        A, B, C = s11.sum(), s22.sum(), s12.sum()
        if A <= 0 or B <= 0:
            vals.append(math.nan)
            ses.append(math.nan)
            continue
        full = C / math.sqrt(A * B)
        if n > 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                loo = (C - s12) / np.sqrt((A - s11) * (B - s22))
            loo = loo[np.isfinite(loo)]
            se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)) if loo.size > 1 else math.inf
        else:
            se = math.inf
        vals.append(full)
        ses.append(se)
    return Curve(taus, np.asarray(vals), np.asarray(ses), None if analytic is None else np.asarray(analytic, float))
