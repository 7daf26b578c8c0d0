"""Exciting functions, baselines, generation-indexed kernel families and grid convolution."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal, special

from .errors import (
    BaselineError,
    GridMismatchError,
    NoEnvelopeError,
    SubcriticalityError,
    ValidationError,
)

DEFAULT_STEP = 1e-3
TAIL_REL_TOL = 1e-10


class HeavyTailWarning(UserWarning):
    """The sampled tail of a tabulated kernel carries a large share of its first moment."""


# --------------------------------------------------------------------------- kernels


class Kernel:
    """Common interface of the four kernel families.

    Subclasses implement ``__call__``, ``l1_norm``, ``cumulative``,
    ``first_moment``, ``truncation_length`` and ``sample``.
    """

    family: str = ""
    has_envelope = True
    # length beyond which the kernel is identically zero (inf if unbounded)
    support = math.inf

    def __call__(self, t):
        raise NotImplementedError

    def l1_norm(self) -> float:
        raise NotImplementedError

    def cumulative(self, t):
        """Integral of the kernel over ``[0, t]``."""
        raise NotImplementedError

    def tail_integral(self, t):
        """Integral of the kernel over ``[t, inf)``."""
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return np.maximum(self.l1_norm() - self.cumulative(t), 0.0)

    def first_moment(self) -> float:
        raise NotImplementedError

    def envelope(self, t):
        """Non-increasing function dominating the kernel on ``t >= 0``."""
        return self(t)

    def truncation_length(self, rel_tol: float = TAIL_REL_TOL) -> float:
        """Smallest length where the tail integral falls below ``rel_tol * l1_norm``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, upper) -> np.ndarray:
        """Draw one offset per entry of ``upper`` from the kernel restricted to ``(0, upper)``."""
        raise NotImplementedError

    def tabulate(self, step: float = DEFAULT_STEP, length: float | None = None) -> GridFunction:
        if length is None:
            length = self.truncation_length()
        n = int(math.ceil(length / step - 1e-9)) + 1
        t = step * np.arange(n)
        return GridFunction(step, self(t))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(Kernel):
    """``weight * exp(-rate * t)``."""

    rate: float
    weight: float
    family = "exponential"

    def __post_init__(self):
        if not (self.rate > 0 and self.weight >= 0):
            raise ValidationError(f"exponential kernel needs rate > 0, weight >= 0 (got {self})")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.weight * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)

    def l1_norm(self):
        return self.weight / self.rate

    def cumulative(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return -self.l1_norm() * np.expm1(-self.rate * t)

    def tail_integral(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.l1_norm() * np.exp(-self.rate * t)

    def first_moment(self):
        return self.weight / self.rate**2

    def truncation_length(self, rel_tol=TAIL_REL_TOL):
        return -math.log(rel_tol) / self.rate

    def sample(self, rng, upper):
        upper = np.asarray(upper, dtype=float)
        u = rng.random(upper.shape)
        return -np.log1p(u * np.expm1(-self.rate * upper)) / self.rate

    def to_dict(self):
        return {"family": self.family, "rate": self.rate, "weight": self.weight}


@dataclass(frozen=True)
class ErlangK(Kernel):
    """``weight`` times the Erlang(shape, rate) density, so the L1 norm is ``weight``."""

    shape: int
    rate: float
    weight: float
    family = "erlang"

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise ValidationError(f"erlang shape must be a positive integer (got {self.shape})")
        if not (self.rate > 0 and self.weight >= 0):
            raise ValidationError(f"erlang kernel needs rate > 0, weight >= 0 (got {self})")

    @property
    def mode(self) -> float:
        return (self.shape - 1) / self.rate

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        k, b = self.shape, self.rate
        with np.errstate(divide="ignore"):
            logpdf = k * math.log(b) + special.xlogy(k - 1, tp) - b * tp - special.gammaln(k)
        return np.where(t >= 0, self.weight * np.exp(logpdf), 0.0)

    def l1_norm(self):
        return float(self.weight)

    def cumulative(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.weight * special.gammainc(self.shape, self.rate * t)

    def tail_integral(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.weight * special.gammaincc(self.shape, self.rate * t)

    def first_moment(self):
        return self.weight * self.shape / self.rate

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self(np.maximum(t, self.mode)), 0.0)

    def truncation_length(self, rel_tol=TAIL_REL_TOL):
        return float(special.gammainccinv(self.shape, rel_tol)) / self.rate

    def sample(self, rng, upper):
        upper = np.asarray(upper, dtype=float)
        u = rng.random(upper.shape)
        p = u * special.gammainc(self.shape, self.rate * upper)
        return special.gammaincinv(self.shape, p) / self.rate

    def to_dict(self):
        return {"family": self.family, "shape": int(self.shape), "rate": self.rate, "weight": self.weight}


@dataclass(frozen=True)
class UniformSupport(Kernel):
    """Constant ``height`` on ``[0, length]``."""

    height: float
    length: float
    family = "uniform"

    def __post_init__(self):
        if not (self.height >= 0 and self.length > 0):
            raise ValidationError(f"uniform kernel needs height >= 0, length > 0 (got {self})")

    @property
    def support(self):
        return self.length

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        # closed support so that tabulation on a grid ending at `length` is exact
        inside = (t >= 0) & (t <= self.length * (1 + 1e-12))
        return np.where(inside, self.height, 0.0)

    def l1_norm(self):
        return self.height * self.length

    def cumulative(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.length)
        return self.height * t

    def first_moment(self):
        return self.height * self.length**2 / 2

    def truncation_length(self, rel_tol=TAIL_REL_TOL):
        return self.length

    def sample(self, rng, upper):
        upper = np.asarray(upper, dtype=float)
        return rng.random(upper.shape) * np.minimum(upper, self.length)

    def to_dict(self):
        return {"family": self.family, "height": self.height, "length": self.length}


@dataclass(frozen=True)
class Tabulated(Kernel):
    """Piecewise-linear interpolant of ``values`` on the grid ``0, step, 2*step, ...``; zero beyond."""

    step: float
    values: tuple
    family = "tabulated"
    has_envelope = False
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValidationError("tabulated kernel needs at least two grid values")
        if self.step <= 0 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValidationError("tabulated kernel needs step > 0 and finite nonnegative values")
        object.__setattr__(self, "values", tuple(float(x) for x in v))
        cum = np.concatenate([[0.0], np.cumsum(0.5 * self.step * (v[1:] + v[:-1]))])
        object.__setattr__(self, "_cum", cum)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def support(self):
        return self.step * (len(self.values) - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        grid = self.step * np.arange(len(self.values))
        return np.where(t >= 0, np.interp(t, grid, self.array, left=0.0, right=0.0), 0.0)

    def l1_norm(self):
        return float(self._cum[-1])

    def cumulative(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.support)
        v = self.array
        k = np.minimum((t / self.step).astype(int), len(v) - 2)
        d = t - k * self.step
        slope = (v[k + 1] - v[k]) / self.step
        return self._cum[k] + v[k] * d + 0.5 * slope * d * d

    def first_moment(self):
        v, h = self.array, self.step
        tk = h * np.arange(len(v) - 1)
        dv = np.diff(v)
        seg = tk * v[:-1] * h + tk * dv * h / 2 + v[:-1] * h * h / 2 + dv * h * h / 3
        total = float(seg.sum())
        tail = float(seg[int(0.9 * len(seg)):].sum())
        if total > 0 and tail > 1e-3 * total:
            warnings.warn(
                f"tabulated kernel: last 10% of the grid carries {tail / total:.1%} of the first "
                "moment; the first moment may not be integrable",
                HeavyTailWarning,
                stacklevel=2,
            )
        return total

    def envelope(self, t):
        raise NoEnvelopeError("tabulated kernels expose no envelope; thinning is unavailable")

    def truncation_length(self, rel_tol=TAIL_REL_TOL):
        tail = self._cum[-1] - self._cum
        idx = np.nonzero(tail < rel_tol * self._cum[-1])[0]
        return float(self.step * idx[0]) if idx.size else self.support

    def sample(self, rng, upper):
        upper = np.asarray(upper, dtype=float)
        v, h = self.array, self.step
        target = rng.random(upper.shape) * self.cumulative(np.minimum(upper, self.support))
        k = np.clip(np.searchsorted(self._cum, target, side="right") - 1, 0, len(v) - 2)
        r = target - self._cum[k]
        slope = (v[k + 1] - v[k]) / h
        disc = np.sqrt(np.maximum(v[k] ** 2 + 2 * slope * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(v[k] + disc > 0, 2 * r / (v[k] + disc), 0.0)
        return np.minimum(k * h + np.clip(d, 0.0, h), upper)

    def tabulate(self, step=DEFAULT_STEP, length=None):
        if length is None and math.isclose(step, self.step):
            return GridFunction(self.step, self.array.copy())
        return super().tabulate(step, length if length is not None else self.support)

    def to_dict(self):
        return {"family": self.family, "step": self.step, "values": list(self.values)}


_KERNEL_FAMILIES = {
    "exponential": Exponential,
    "erlang": ErlangK,
    "uniform": UniformSupport,
    "tabulated": Tabulated,
}


def kernel_from_dict(d: dict) -> Kernel:
    d = dict(d)
    family = d.pop("family", None)
    if family not in _KERNEL_FAMILIES:
        raise ValidationError(f"unknown kernel family {family!r}; expected one of {sorted(_KERNEL_FAMILIES)}")
    if family == "tabulated":
        d["values"] = tuple(d.get("values", ()))
    try:
        return _KERNEL_FAMILIES[family](**d)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {family} kernel: {exc}") from None


def l1_norm(k: Kernel) -> float:
    return k.l1_norm()


def tail_integral(k: Kernel, t):
    return k.tail_integral(t)


def first_moment(k: Kernel) -> float:
    return k.first_moment()


# -------------------------------------------------------------------------- baseline


class Baseline:
    """Immigrant intensity. ``Constant`` or ``PiecewiseConstant``."""

    is_constant = False

    def rate(self, t):
        raise NotImplementedError

    def integral(self, t) -> float:
        raise NotImplementedError

    def mean_rate(self) -> float:
        raise NotImplementedError

    def sup_from(self, t) -> float:
        """Supremum of the rate on ``[t, inf)`` (non-increasing in ``t``)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, horizon: float) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Baseline):
    level: float
    is_constant = True

    def __post_init__(self):
        if not (self.level > 0 and math.isfinite(self.level)):
            raise BaselineError(f"constant baseline needs a finite positive level (got {self.level})")

    def rate(self, t):
        return np.full(np.shape(t), self.level) if np.ndim(t) else self.level

    def integral(self, t):
        return self.level * max(t, 0.0)

    def mean_rate(self):
        return self.level

    def sup_from(self, t):
        return self.level

    def sample(self, rng, horizon):
        n = rng.poisson(self.level * horizon)
        return np.sort(rng.random(n) * horizon)

    def to_dict(self):
        return {"kind": "constant", "level": self.level}


@dataclass(frozen=True)
class PiecewiseConstant(Baseline):
    """``levels[i]`` on ``[breakpoints[i-1], breakpoints[i])`` with ``breakpoints[-1] = 0`` implied.

    ``len(breakpoints)`` must be ``len(levels) - 1`` so that the final level extends
    to infinity and defines the mean rate.
    """

    breakpoints: tuple
    levels: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        lv = tuple(float(x) for x in self.levels)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise BaselineError("piecewise baseline needs at least one level")
        if len(b) != len(lv) - 1:
            raise BaselineError(
                "piecewise baseline has no final level: expected len(breakpoints) == len(levels) - 1 "
                f"(got {len(b)} breakpoints, {len(lv)} levels)"
            )
        if any(x < 0 or not math.isfinite(x) for x in lv):
            raise BaselineError("baseline levels must be finite and >= 0")
        if b and (b[0] <= 0 or any(y <= x for x, y in zip(b, b[1:]))):
            raise BaselineError("breakpoints must be positive and strictly increasing")

    def _edges(self):
        return np.array((0.0,) + self.breakpoints + (math.inf,))

    def rate(self, t):
        idx = np.searchsorted(np.array(self.breakpoints), np.asarray(t, dtype=float), side="right")
        out = np.asarray(self.levels)[idx]
        return np.where(np.asarray(t) >= 0, out, 0.0) if np.ndim(t) else float(out) if t >= 0 else 0.0

    def integral(self, t):
        e = self._edges()
        lo = np.minimum(e[:-1], max(t, 0.0))
        hi = np.minimum(e[1:], max(t, 0.0))
        return float(np.dot(hi - lo, self.levels))

    def mean_rate(self):
        return self.levels[-1]

    def sup_from(self, t):
        idx = int(np.searchsorted(np.array(self.breakpoints), t, side="right"))
        return max(self.levels[idx:])

    def sample(self, rng, horizon):
        top = max(self.levels)
        n = rng.poisson(top * horizon)
        cand = np.sort(rng.random(n) * horizon)
        keep = rng.random(n) * top < self.rate(cand)
        return cand[keep]

    def to_dict(self):
        return {"kind": "piecewise", "breakpoints": list(self.breakpoints), "levels": list(self.levels)}


def baseline_from_dict(d: dict) -> Baseline:
    kind = d.get("kind", "constant")
    if kind == "constant":
        return Constant(float(d["level"]))
    if kind == "piecewise":
        return PiecewiseConstant(tuple(d.get("breakpoints", ())), tuple(d["levels"]))
    raise ValidationError(f"unknown baseline kind {kind!r}")


# ------------------------------------------------------------------ kernel sequence


class Extension(str, enum.Enum):
    CYCLIC = "cyclic"
    TAIL_CONSTANT = "tail_constant"
    NULL = "null"


@dataclass(frozen=True)
class KernelSequence:
    """Immigrant baseline plus kernels for generations ``1..K`` and a rule for ``n > K``.

    Construction enforces ``rho = sup_n ||gamma_n||_1 < 1``.
    """

    baseline: Baseline
    explicit: tuple = ()
    extension: Extension = Extension.TAIL_CONSTANT

    def __post_init__(self):
        object.__setattr__(self, "explicit", tuple(self.explicit))
        object.__setattr__(self, "extension", Extension(self.extension))
        if not self.explicit and self.extension is not Extension.NULL:
            raise ValidationError(f"extension {self.extension.value!r} needs at least one explicit kernel")
        for n, k in enumerate(self.explicit, start=1):
            norm = k.l1_norm()
            if not norm < 1:
                raise SubcriticalityError(
                    f"kernel for generation {n} ({k.family}) has L1 norm {norm:.6g} >= 1; "
                    "the branching ratio rho = sup_n ||gamma_n||_1 must be < 1",
                    generation=n,
                    norm=norm,
                )

    @property
    def K(self) -> int:
        return len(self.explicit)

    @property
    def rho(self) -> float:
        return max((k.l1_norm() for k in self.explicit), default=0.0)

    @property
    def eta(self) -> float:
        return max((k.first_moment() for k in self.explicit), default=0.0)

    @property
    def mean_rate(self) -> float:
        return self.baseline.mean_rate()

    def slot(self, n: int) -> int | None:
        """Index into ``explicit`` of the kernel for generation ``n >= 1``; None if null."""
        if n < 1:
            raise ValueError("generations with kernels start at 1")
        if self.extension is Extension.CYCLIC:
            return (n - 1) % self.K
        if self.extension is Extension.TAIL_CONSTANT:
            return min(n, self.K) - 1
        return n - 1 if n <= self.K else None

    def kernel_at(self, n: int) -> Kernel | None:
        s = self.slot(n)
        return None if s is None else self.explicit[s]

    def norm_at(self, n: int) -> float:
        s = self.slot(n)
        return 0.0 if s is None else self.explicit[s].l1_norm()

    def norms(self, n: int) -> np.ndarray:
        """``||gamma_1||, ..., ||gamma_n||``."""
        return np.array([self.norm_at(i) for i in range(1, n + 1)])

    def structure(self) -> tuple[np.ndarray, np.ndarray]:
        """Norms split as (prefix, cycle): generations ``1..L`` then the cycle repeated forever."""
        a = np.array([k.l1_norm() for k in self.explicit])
        if self.extension is Extension.CYCLIC:
            return a[:0], a
        if self.extension is Extension.TAIL_CONSTANT:
            return a[:-1], a[-1:]
        return a, np.zeros(1)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "extension": self.extension.value,
            "kernels": [k.to_dict() for k in self.explicit],
        }

    @classmethod
    def from_dict(cls, d: dict) -> KernelSequence:
        return cls(
            baseline_from_dict(d["baseline"]),
            tuple(kernel_from_dict(k) for k in d.get("kernels", ())),
            Extension(d.get("extension", "tail_constant")),
        )


def classical(level: float, kernel: Kernel) -> KernelSequence:
    """Every generation uses the same kernel: the linear Hawkes process."""
    return KernelSequence(Constant(level), (kernel,), Extension.TAIL_CONSTANT)


# --------------------------------------------------------------------- grid functions


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples ``values[k]`` of a function at ``origin + k * step``; zero off the grid span.

    Values are read as a piecewise-linear function, so trapezoid integrals are exact.
    """

    step: float
    values: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.step <= 0:
            raise ValidationError("grid step must be positive")

    @property
    def length(self) -> float:
        return self.step * (len(self.values) - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.origin + self.step * np.arange(len(self.values))

    def integral(self) -> float:
        v = self.values
        if v.size < 2:
            return 0.0
        return float(self.step * (v.sum() - 0.5 * (v[0] + v[-1])))

    def l1(self) -> float:
        return GridFunction(self.step, np.abs(self.values)).integral()

    def __call__(self, t):
        return np.interp(t, self.grid, self.values, left=0.0, right=0.0)

    def truncate(self, length: float) -> GridFunction:
        n = int(round(length / self.step)) + 1
        return GridFunction(self.step, self.values[:n], self.origin)

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_steps(self, other)
        lo = min(self.origin, other.origin)
        hi = max(self.origin + self.length, other.origin + other.length)
        n = int(round((hi - lo) / self.step)) + 1
        out = np.zeros(n)
        for g in (self, other):
            i = int(round((g.origin - lo) / self.step))
            out[i : i + len(g.values)] += g.values
        return GridFunction(self.step, out, lo)

    def scaled(self, c: float) -> GridFunction:
        return GridFunction(self.step, c * self.values, self.origin)


def _check_steps(f: GridFunction, g: GridFunction):
    if not math.isclose(f.step, g.step, rel_tol=1e-12):
        raise GridMismatchError(f"grid steps differ: {f.step} vs {g.step}")


def convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    """Trapezoid-rule convolution ``(f * g)(x) = int f(s) g(x - s) ds``.

    At each output node the integral runs over the overlap of the two supports
    with half weight on both endpoints.
    """
    _check_steps(f, g)
    a, b = f.values, g.values
    n1, n2 = len(a), len(b)
    if n1 * n2 > 50_000:
        full = signal.fftconvolve(a, b)
    else:
        full = np.convolve(a, b)
    k = np.arange(n1 + n2 - 1)
    lo = np.maximum(0, k - (n2 - 1))
    hi = np.minimum(k, n1 - 1)
    full = full - 0.5 * (a[lo] * b[k - lo] + a[hi] * b[k - hi])
    return GridFunction(f.step, f.step * full, f.origin + g.origin)


def reflect(f: GridFunction) -> GridFunction:
    """``x -> f(-x)``."""
    return GridFunction(f.step, f.values[::-1].copy(), -(f.origin + f.length))
