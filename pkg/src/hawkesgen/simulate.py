"""Exact path simulation by branching construction and by Ogata thinning."""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NoEnvelopeError, TruncationError, ValidationError
from .kernels import Extension, KernelSequence

MAX_GENERATIONS = 10_000
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream; ``(seed, stream)`` fixes every draw."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, k: int) -> RngStream:
        return RngStream(self.seed, self.stream * 1_000_003 + k + 1)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


# ------------------------------------------------------------------ truncation


def expected_immigrants(seq: KernelSequence, T: float) -> float:
    # max with mean_rate*T keeps the bound valid for decreasing piecewise baselines too
    return max(seq.baseline.integral(T), seq.mean_rate * T)


def residual_bound(seq: KernelSequence, T: float, M: int) -> float:
    """Expected number of points in generations ``> M`` on ``(0, T]`` (upper bound)."""
    if seq.extension is Extension.NULL and M >= seq.K:
        return 0.0
    rho = seq.rho
    if rho == 0.0:
        return 0.0
    return expected_immigrants(seq, T) * rho ** (M + 1) / (1 - rho)


def truncation_depth(seq: KernelSequence, T: float, tol: float, cap: int = MAX_GENERATIONS) -> int:
    """Smallest ``M`` with ``residual_bound(seq, T, M) < tol``."""
    if not tol > 0:
        raise ValidationError(f"tolerance must be positive (got {tol})")
    if seq.extension is Extension.NULL and seq.K == 0 or seq.rho == 0.0:
        return 0
    lam, rho = expected_immigrants(seq, T), seq.rho
    M = max(0, math.ceil(math.log(tol * (1 - rho) / lam) / math.log(rho) - 1))
    while M > 0 and residual_bound(seq, T, M - 1) < tol:
        M -= 1
    while residual_bound(seq, T, M) >= tol:
        M += 1
    if seq.extension is Extension.NULL:
        M = min(M, seq.K)
    if M > cap:
        raise TruncationError(
            f"tolerance {tol:g} needs {M} generations, above the cap of {cap}; "
            f"smallest achievable residual bound is {residual_bound(seq, T, cap):.3g}",
            achievable_bound=residual_bound(seq, T, cap),
        )
    return M


# -------------------------------------------------------------------- event log


@dataclass(frozen=True, eq=False)
class EventLog:
    """Sorted, generation-labelled realization on ``(0, T]``.

    ``parents[i]`` is the index of the parent of event ``i`` (-1 for immigrants).
    """

    horizon: float
    times: np.ndarray
    generations: np.ndarray
    M_used: int
    truncation_bound: float
    parents: np.ndarray | None = None

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def counts_by_generation(self) -> np.ndarray:
        if self.n_events == 0:
            return np.zeros(1, dtype=np.int64)
        return np.bincount(self.generations)

    def count_until(self, t: float) -> int:
        return int(np.searchsorted(self.times, t, side="right"))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("time,generation\n")
        for t, g in zip(self.times, self.generations):
            buf.write(f"{t:.9f},{int(g)}\n")
        text = buf.getvalue()
        if path is not None:
            _atomic_write(path, text)
        return text

    def summary(self) -> dict:
        return {
            "N_T": self.n_events,
            "horizon": self.horizon,
            "counts_by_generation": [int(c) for c in self.counts_by_generation()],
            "M_used": self.M_used,
            "truncation_bound": self.truncation_bound,
        }

    def validate(self, tol: float | None = None) -> None:
        """Raise :class:`ValidationError` if a log invariant fails."""
        t, g = self.times, self.generations
        if t.size and (t[0] <= 0 or t[-1] > self.horizon):
            raise ValidationError("event times must lie in (0, T]")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("event times must be strictly increasing")
        if np.any(g < 0) or (g.size and g.max() > self.M_used):
            raise ValidationError("generation labels must lie in 0..M_used")
        if self.parents is not None:
            p = self.parents
            roots = p < 0
            if np.any(roots != (g == 0)):
                raise ValidationError("exactly the generation-0 events are parentless")
            kids = np.nonzero(~roots)[0]
            if np.any(g[p[kids]] != g[kids] - 1) or np.any(t[p[kids]] >= t[kids]):
                raise ValidationError("each offspring needs an earlier parent one generation up")
        else:
            for n in np.unique(g[g > 0]):
                first_child = t[g == n][0]
                if not np.any((g == n - 1) & (t < first_child)):
                    raise ValidationError(f"generation {n} has no earlier generation-{n - 1} ancestor")
        if tol is not None and not self.truncation_bound < tol:
            raise ValidationError(f"truncation bound {self.truncation_bound:g} is not below {tol:g}")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --------------------------------------------------------------- branching core


@dataclass(frozen=True, eq=False)
class BatchLog:
    """Events of many independent paths, sorted by (path, time)."""

    horizon: float
    n_paths: int
    times: np.ndarray
    generations: np.ndarray
    paths: np.ndarray
    M_used: int
    truncation_bound: float
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        off = np.searchsorted(self.paths, np.arange(self.n_paths + 1))
        object.__setattr__(self, "offsets", off)

    def counts(self, t: float | None = None) -> np.ndarray:
        """``N_t`` per path (``t`` defaults to the horizon)."""
        if t is None or t >= self.horizon:
            return np.diff(self.offsets)
        return np.bincount(self.paths[self.times <= t], minlength=self.n_paths)

    def path(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        s = slice(self.offsets[k], self.offsets[k + 1])
        return self.times[s], self.generations[s]


def _immigrants(seq: KernelSequence, T: float, n_paths: int, rng: np.random.Generator):
    base = seq.baseline
    if base.is_constant:
        counts = rng.poisson(base.level * T, size=n_paths)
        times = rng.random(counts.sum()) * T
    else:
        top = max(base.levels)
        counts = rng.poisson(top * T, size=n_paths)
        times = rng.random(counts.sum()) * T
        keep = rng.random(times.size) * top < base.rate(times)
        counts = np.bincount(np.repeat(np.arange(n_paths), counts)[keep], minlength=n_paths)
        times = times[keep]
    return times, np.repeat(np.arange(n_paths), counts)


def _branch(seq: KernelSequence, T: float, rng: np.random.Generator, n_paths: int, M: int):
    """Generation-by-generation construction; returns unsorted (times, gens, paths, parents)."""
    t0, p0 = _immigrants(seq, T, n_paths, rng)
    times, gens, paths, parents = [t0], [np.zeros(t0.size, np.int64)], [p0], [np.full(t0.size, -1)]
    prev_t, prev_p, base_idx = t0, p0, 0
    for n in range(1, M + 1):
        k = seq.kernel_at(n)
        if k is None or prev_t.size == 0:
            break
        room = T - prev_t
        nkids = rng.poisson(k.cumulative(room))
        if nkids.sum() == 0:
            break
        parent_local = np.repeat(np.arange(prev_t.size), nkids)
        start = prev_t[parent_local]
        child_t = start + k.sample(rng, room[parent_local])
        # a zero offset from float rounding would duplicate the parent time
        child_t = np.where(child_t > start, child_t, np.nextafter(start, np.inf))
        times.append(child_t)
        gens.append(np.full(child_t.size, n, np.int64))
        paths.append(prev_p[parent_local])
        parents.append(base_idx + parent_local)
        base_idx += prev_t.size
        prev_t, prev_p = child_t, prev_p[parent_local]
    return (np.concatenate(times), np.concatenate(gens), np.concatenate(paths), np.concatenate(parents))


def simulate_branching(seq: KernelSequence, T: float, rng=0, tol: float = DEFAULT_TOL) -> EventLog:
    """Immigrant-birth construction of one path on ``(0, T]``.

    Generation ``n`` children of a point at ``tau`` are Poisson with mean
    ``int_0^{T - tau} gamma_n`` and placed i.i.d. from the kernel restricted to
    ``(tau, T)``. Generations stop at the first ``M`` whose geometric residual
    bound falls below ``tol``.
    """
    if not T > 0:
        raise ValidationError(f"horizon must be positive (got {T})")
    M = truncation_depth(seq, T, tol)
    t, g, _, par = _branch(seq, T, _as_generator(rng), 1, M)
    order = np.argsort(t, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    par = par[order]
    par = np.where(par >= 0, inv[np.maximum(par, 0)], -1)
    return EventLog(T, t[order], g[order], M, residual_bound(seq, T, M), par)


def simulate_batch(seq: KernelSequence, T: float, n_paths: int, rng=0, tol: float = DEFAULT_TOL) -> BatchLog:
    """Many independent branching paths generated together (vectorized)."""
    if not T > 0 or n_paths < 1:
        raise ValidationError("need T > 0 and n_paths >= 1")
    M = truncation_depth(seq, T, tol)
    t, g, p, _ = _branch(seq, T, _as_generator(rng), n_paths, M)
    order = np.lexsort((t, p))
    return BatchLog(T, n_paths, t[order], g[order], p[order], M, residual_bound(seq, T, M))


def count_samples(seq: KernelSequence, T: float, n_paths: int, rng=0, tol=DEFAULT_TOL, chunk=20_000) -> np.ndarray:
    """``N_T`` for ``n_paths`` independent paths, generated in memory-bounded chunks."""
    gen = _as_generator(rng)
    out = []
    for start in range(0, n_paths, chunk):
        n = min(chunk, n_paths - start)
        out.append(simulate_batch(seq, T, n, gen, tol).counts())
    return np.concatenate(out)


# --------------------------------------------------------------------- thinning


def simulate_thinning(seq: KernelSequence, T: float, rng=0, max_gen: int | None = None,
                      tol: float = DEFAULT_TOL) -> EventLog:
    """Ogata thinning of the aggregate intensity, generations ``0..max_gen``.

    The dominating rate at time ``t`` is the baseline supremum on ``[t, inf)`` plus
    each live event's kernel envelope at its lag; it stays valid until the next
    acceptance because every envelope is non-increasing. An accepted point picks
    its parent (or immigrant status) proportionally to the contributions at that
    time, which labels its generation.
    """
    if not T > 0:
        raise ValidationError(f"horizon must be positive (got {T})")
    if max_gen is None:
        max_gen = truncation_depth(seq, T, tol)
    slots = {}
    for n in range(1, max_gen + 1):
        s = seq.slot(n)
        if s is None:
            continue
        k = seq.explicit[s]
        if not k.has_envelope:
            raise NoEnvelopeError(
                f"generation {n} uses a {k.family} kernel without an envelope; use branching simulation"
            )
        slots.setdefault(s, k)
    gen = _as_generator(rng)
    base = seq.baseline
    horizon_len = {s: k.truncation_length() for s, k in slots.items()}
    live_t = {s: np.empty(0) for s in slots}
    live_i = {s: np.empty(0, np.int64) for s in slots}
    out_t, out_g, out_p = [], [], []
    t = 0.0
    while True:
        bound = base.sup_from(t)
        for s, k in slots.items():
            if live_t[s].size:
                keep = t - live_t[s] <= horizon_len[s]
                live_t[s], live_i[s] = live_t[s][keep], live_i[s][keep]
                bound += float(np.sum(k.envelope(t - live_t[s])))
        t += gen.exponential(1.0 / bound)
        if t > T:
            break
        contrib = {s: k(t - live_t[s]) for s, k in slots.items()}
        lam0 = float(base.rate(t))
        lam = lam0 + sum(float(v.sum()) for v in contrib.values())
        u = gen.random() * bound
        if u >= lam:
            continue
        idx = len(out_t)
        if u < lam0:
            g, parent = 0, -1
        else:
            u -= lam0
            for s, v in contrib.items():
                tot = float(v.sum())
                if u < tot:
                    j = min(int(np.searchsorted(np.cumsum(v), u, side="right")), v.size - 1)
                    parent = int(live_i[s][j])
                    break
                u -= tot
            else:  # rounding residue lands on the last contributor
                s = next(s for s in reversed(list(contrib)) if contrib[s].size)
                parent = int(live_i[s][-1])
            g = out_g[parent] + 1
        out_t.append(t)
        out_g.append(g)
        out_p.append(parent)
        if g < max_gen:
            s = seq.slot(g + 1)
            if s is not None:
                live_t[s] = np.append(live_t[s], t)
                live_i[s] = np.append(live_i[s], idx)
    return EventLog(
        T,
        np.asarray(out_t, float),
        np.asarray(out_g, np.int64),
        max_gen,
        residual_bound(seq, T, max_gen),
        np.asarray(out_p, np.int64),
    )


# -------------------------------------------------------------------- replicate


@dataclass(frozen=True)
class LogSummary:
    stream: int
    N_T: int
    counts_by_generation: tuple
    M_used: int
    truncation_bound: float


def _one(args) -> LogSummary:
    seq, T, seed, stream, tol, method = args
    rng = RngStream(seed, stream)
    log = simulate_branching(seq, T, rng, tol) if method == "branching" else simulate_thinning(seq, T, rng, tol=tol)
    return LogSummary(stream, log.n_events, tuple(int(c) for c in log.counts_by_generation()),
                      log.M_used, log.truncation_bound)


def replicate(scenario, n_reps: int, *, T: float | None = None, seed: int | None = None,
              tol: float | None = None, method: str = "branching", workers: int | None = None) -> list[LogSummary]:
    """Independent replications on streams ``0..n_reps-1``, returned in stream order.

    ``scenario`` is a :class:`KernelSequence` (then ``T`` and ``seed`` are required)
    or any object with ``sequence``, ``horizon``, ``seed`` and ``series_tol``.
    """
    if n_reps < 1:
        raise ValidationError("n_reps must be >= 1")
    if isinstance(scenario, KernelSequence):
        seq = scenario
    else:
        seq = scenario.sequence
        T = scenario.horizon if T is None else T
        seed = scenario.seed if seed is None else seed
        tol = scenario.series_tol if tol is None else tol
    if T is None or seed is None:
        raise ValidationError("replicate needs a horizon and a seed")
    tol = DEFAULT_TOL if tol is None else tol
    jobs = [(seq, T, seed, k, tol, method) for k in range(n_reps)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one, jobs, chunksize=max(1, n_reps // (4 * workers))))
    return [_one(j) for j in jobs]
