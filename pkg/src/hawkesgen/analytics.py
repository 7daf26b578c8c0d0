"""First- and second-order limit constants, partition sums and equilibrium bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BaselineError, GridBudgetError, PartitionError, SpectralRadiusError, ValidationError
from .kernels import DEFAULT_STEP, Extension, GridFunction, KernelSequence, convolve

GRID_BUDGET = 5_000_000


@dataclass(frozen=True)
class LimitConstants:
    """``m_n`` (generation rates), ``m`` and ``sigma2`` with truncation companions.

    ``truncation_error_m`` is ``m - sum(m_n)`` for the listed generations;
    ``truncation_error_sigma2`` bounds the error of ``sigma2`` itself.
    """

    m_n: np.ndarray
    m: float
    sigma2: float
    truncation_error_m: float
    truncation_error_sigma2: float


def _generations_for(gbar: float, rho: float, tol: float) -> int:
    """Smallest ``n`` with ``gbar * rho**(n+1) / (1 - rho) < tol``."""
    if rho == 0.0:
        return 0
    n = max(0, math.ceil(math.log(tol * (1 - rho) / max(gbar, tol)) / math.log(rho)) - 1)
    while gbar * rho ** (n + 1) / (1 - rho) >= tol:
        n += 1
    return n


def _cycle_sums(cycle: np.ndarray):
    """For a norm cycle ``c_1..c_K`` return (prefix products, S at each offset).

    ``prefix[r] = c_1 * ... * c_r`` and ``S[r] = sum_{p>=1} prod of the next p norms``
    starting after offset ``r``.
    """
    K = cycle.size
    P = float(np.prod(cycle))
    prefix = np.concatenate([[1.0], np.cumprod(cycle)[:-1]])
    S = np.empty(K)
    for r in range(K):
        rolled = np.roll(cycle, -r)
        S[r] = np.cumprod(rolled).sum() / (1 - P)
    return prefix, S, P


def _closed_form(seq: KernelSequence):
    gbar = seq.mean_rate
    pre, cyc = seq.structure()
    L = pre.size
    cprod, S_cyc, P = _cycle_sums(cyc)
    # prefix generations j = 0..L-1, S_j by backward recursion from S_L
    S = np.empty(L + 1)
    S[L] = S_cyc[0]
    for j in range(L - 1, -1, -1):
        S[j] = pre[j] * (1 + S[j + 1])
    m_pre = gbar * np.concatenate([[1.0], np.cumprod(pre)])  # m_0..m_L
    mL = m_pre[L]
    m = m_pre[:L].sum() + mL * cprod.sum() / (1 - P)
    sigma2 = float(np.dot((1 + S[:L]) ** 2, m_pre[:L]) + mL * np.dot(cprod, (1 + S_cyc) ** 2) / (1 - P))
    return float(m), sigma2


def _series(seq: KernelSequence, tol: float):
    """Direct truncated double series with a certified remainder (independent oracle)."""
    gbar, rho = seq.mean_rate, seq.rho
    J = _generations_for(gbar, rho, tol * (1 - rho) ** 2)
    inner_tol = tol * (1 - rho) / (1 + gbar)
    Pmax = _generations_for(1.0, rho, inner_tol)
    a = seq.norms(J + Pmax + 1)
    m_n = gbar * np.concatenate([[1.0], np.cumprod(a[:J])])
    sigma2 = 0.0
    for j in range(J + 1):
        S = np.cumprod(a[j : j + Pmax]).sum() if Pmax else 0.0
        sigma2 += (1 + S) ** 2 * m_n[j]
    m = float(m_n.sum())
    tail_m = gbar * rho ** (J + 1) / (1 - rho) if rho else 0.0
    R = rho ** (Pmax + 1) / (1 - rho) if rho else 0.0
    err_s = tail_m / (1 - rho) ** 2 + m * (2 / (1 - rho) + R) * R
    return m, sigma2, tail_m, err_s, m_n


def limit_constants(seq: KernelSequence, tol: float = 1e-12, method: str = "closed") -> LimitConstants:
    """``m = sum_n m_n`` and ``sigma2 = sum_j (1 + S_j)**2 m_j``.

    ``method="closed"`` collapses the eventually periodic norm sequence into
    finitely many terms (exact up to rounding). ``method="series"`` sums both
    series directly with geometric remainder bounds.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    gbar, rho = seq.mean_rate, seq.rho
    n_max = _generations_for(gbar, rho, tol)
    if seq.extension is Extension.NULL:
        n_max = min(n_max, seq.K)
    m_n = gbar * np.concatenate([[1.0], np.cumprod(seq.norms(n_max))])
    if method == "closed":
        m, sigma2 = _closed_form(seq)
        return LimitConstants(m_n, m, sigma2, max(m - float(m_n.sum()), 0.0), 0.0)
    if method == "series":
        m, sigma2, err_m, err_s, _ = _series(seq, tol)
        return LimitConstants(m_n, m, sigma2, max(err_m, 0.0), err_s)
    raise ValidationError(f"unknown method {method!r}")


def generation_rates(seq: KernelSequence, n: int) -> np.ndarray:
    """``m_0, ..., m_n``."""
    return seq.mean_rate * np.concatenate([[1.0], np.cumprod(seq.norms(n))])


def _baseline_grid(seq: KernelSequence, t: float, step: float) -> GridFunction:
    n = int(round(t / step)) + 1
    if n > GRID_BUDGET:
        raise GridBudgetError(f"grid of {n} points exceeds the budget of {GRID_BUDGET}")
    return GridFunction(step, np.asarray(seq.baseline.rate(step * np.arange(n)), float))


def mean_count(seq: KernelSequence, t: float, step: float = DEFAULT_STEP, tol: float = 1e-9) -> float:
    """``E[N_t]`` from the grid series ``int_0^t sum_n (gamma_0 * ... * gamma_n)(s) ds``."""
    if t < 0:
        raise ValidationError("t must be >= 0")
    if t == 0:
        return 0.0
    D = _baseline_grid(seq, t, step)
    n_pts = D.values.size
    total = D.integral()
    rho = seq.rho
    lam = max(seq.baseline.integral(t), seq.mean_rate * t)
    n = 0
    while True:
        n += 1
        k = seq.kernel_at(n)
        if k is None or rho == 0.0 or lam * rho ** n / (1 - rho) < tol:
            break
        kg = k.tabulate(step, min(k.truncation_length(), t))
        D = GridFunction(step, convolve(kg, D).values[:n_pts])
        total += D.integral()
    return float(total)


# ------------------------------------------------------------------- partitions


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment of generations ``0, 1, 2, ...`` to classes ``0..d-1``.

    Generation ``n`` goes to ``prefix[n]`` when ``n < len(prefix)``, otherwise to
    ``cycle[(n - len(prefix)) % len(cycle)]``. Empty classes are allowed.
    """

    d: int
    prefix: tuple = ()
    cycle: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(int(c) for c in self.prefix))
        object.__setattr__(self, "cycle", tuple(int(c) for c in self.cycle))
        if self.d < 1:
            raise PartitionError("a partition needs d >= 1 classes")
        if not self.cycle:
            raise PartitionError("partition cycle must be non-empty so every generation is assigned")
        bad = [c for c in self.prefix + self.cycle if not 0 <= c < self.d]
        if bad:
            raise PartitionError(f"class labels must lie in 0..{self.d - 1} (got {bad})")

    def class_of(self, n: int) -> int:
        if n < len(self.prefix):
            return self.prefix[n]
        return self.cycle[(n - len(self.prefix)) % len(self.cycle)]

    def classes(self, n: int) -> np.ndarray:
        """Class labels of generations ``0..n-1``."""
        return np.array([self.class_of(i) for i in range(n)], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"d": self.d, "prefix": list(self.prefix), "cycle": list(self.cycle)}

    @classmethod
    def from_dict(cls, d: dict) -> PartitionSpec:
        return cls(int(d["d"]), tuple(d.get("prefix", ())), tuple(d.get("cycle", (0,))))


EVEN_ODD = PartitionSpec(2, (), (0, 1))


def partition_lln(seq: KernelSequence, part: PartitionSpec, tol: float = 1e-12) -> np.ndarray:
    """Class-wise limits ``sum_{n in A_i} m_n`` (exact, via the joint period)."""
    gbar = seq.mean_rate
    pre, cyc = seq.structure()
    Ls, Ks = pre.size, cyc.size
    Lp, Kp = len(part.prefix), len(part.cycle)
    J0 = max(Ls, Lp)
    Q = math.lcm(Ks, Kp)
    if Q > 10**6:
        raise ValidationError("joint period of sequence and partition is too long")
    m = generation_rates(seq, J0 + Q - 1)
    labels = part.classes(J0 + Q)
    out = np.zeros(part.d)
    np.add.at(out, labels[:J0], m[:J0])
    P = float(np.prod(cyc)) ** (Q // Ks)
    np.add.at(out, labels[J0:], m[J0:] / (1 - P))
    return out


def partition_matrix(seq: KernelSequence, part: PartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(nu, Phi)`` of the equivalent multivariate process when it exists.

    ``Phi[i, j]`` is the L1 mass of class-``i`` children per class-``j`` point. The
    reduction requires every generation ``n`` of class ``j`` to hand its children a
    kernel and class that depend only on ``j``; otherwise :class:`PartitionError`.
    """
    pre, cyc = seq.structure()
    J0 = max(pre.size, len(part.prefix)) + 1
    Q = math.lcm(cyc.size, len(part.cycle))
    a = seq.norms(J0 + Q + 1)
    seen: dict[int, set] = {}
    for n in range(1, J0 + Q + 2):
        seen.setdefault(part.class_of(n - 1), set()).add((part.class_of(n), float(a[n - 1])))
    Phi = np.zeros((part.d, part.d))
    for j, pairs in seen.items():
        if len(pairs) > 1:
            raise PartitionError(
                f"class {j} passes different kernels or classes to its offspring; "
                "the partition does not reduce to a multivariate Hawkes process"
            )
        i, norm = pairs.pop()
        Phi[i, j] = norm
    nu = np.zeros(part.d)
    nu[part.class_of(0)] = seq.mean_rate
    return nu, Phi


def spectral_radius(Phi: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(Phi, float))))) if np.size(Phi) else 0.0


def multivariate_check(nu: Sequence[float], Phi) -> np.ndarray:
    """Solve ``(I - Phi) x = nu`` after checking the spectral radius of ``Phi`` is below 1."""
    nu = np.asarray(nu, float)
    Phi = np.atleast_2d(np.asarray(Phi, float))
    if Phi.shape != (nu.size, nu.size):
        raise ValidationError(f"Phi must be {nu.size}x{nu.size}")
    if np.any(Phi < 0) or np.any(nu < 0):
        raise ValidationError("nu and Phi must be nonnegative")
    r = spectral_radius(Phi)
    if not r < 1:
        raise SpectralRadiusError(f"spectral radius of Phi is {r:.6g} >= 1")
    return np.linalg.solve(np.eye(nu.size) - Phi, nu)


# ------------------------------------------------------------------- equilibrium


@dataclass(frozen=True)
class EquilibriumBound:
    """``value`` bounds the chance that pre-``(-s)`` immigrants have offspring in ``(0, T)``."""

    value: float
    strong_cap: float
    truncation_error: float
    generations: int


def strong_cap(seq: KernelSequence) -> float:
    """``gbar * sum_n n rho**(n-1) * eta = gbar * eta / (1 - rho)**2``."""
    return seq.mean_rate * seq.eta / (1 - seq.rho) ** 2


def equilibrium_bound(seq: KernelSequence, s: float, T: float, step: float = DEFAULT_STEP,
                      tol: float = 1e-9) -> EquilibriumBound:
    """Grid value of ``int_0^T sum_n E[lambda_n(t)] dt`` for the offspring of immigrants before ``-s``.

    With ``x = t + s``, ``E[lambda_1](x) = gbar H_1(x)`` and
    ``E[lambda_n] = gbar (a_1 ... a_{n-1}) H_n + gamma_n * E[lambda_{n-1}]``,
    where ``H_n`` is the tail integral of ``gamma_n``. Generations are added until
    ``T * gbar * sum_{n>N} n rho**n`` falls below ``tol``; that sum is returned as
    the truncation error.
    """
    if not seq.baseline.is_constant:
        raise BaselineError("equilibrium bounds need a constant baseline")
    if s < 0 or T <= 0:
        raise ValidationError("need s >= 0 and T > 0")
    gbar, rho = seq.mean_rate, seq.rho
    cap = strong_cap(seq)
    if rho == 0.0:
        return EquilibriumBound(0.0, cap, 0.0, 0)
    n_pts = int(round((s + T) / step)) + 1
    if n_pts > GRID_BUDGET:
        raise GridBudgetError(f"grid of {n_pts} points exceeds the budget of {GRID_BUDGET}")
    x = step * np.arange(n_pts)
    i0 = int(round(s / step))

    def tail_remainder(N):
        return T * gbar * rho ** (N + 1) * ((N + 1) - N * rho) / (1 - rho) ** 2

    total, prod, D, N = 0.0, 1.0, None, 0
    while True:
        N += 1
        k = seq.kernel_at(N)
        if k is None:
            err = 0.0
            N -= 1
            break
        H = gbar * prod * k.tail_integral(x)
        if D is None:
            D = H
        else:
            kg = k.tabulate(step, min(k.truncation_length(), x[-1]))
            D = H + convolve(kg, GridFunction(step, D)).values[:n_pts]
        total += GridFunction(step, D[i0:]).integral()
        prod *= k.l1_norm()
        err = tail_remainder(N)
        if err < tol:
            break
    return EquilibriumBound(float(total), cap, float(err), N)
