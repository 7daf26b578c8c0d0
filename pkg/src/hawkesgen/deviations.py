"""Limiting cumulant, its blow-up point, Legendre rate functions and claim-size laws."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .errors import NoSolutionError, ValidationError
from .kernels import KernelSequence

INF = math.inf
TANGENCY_EPS = 1e-12


def _phi_chain(theta: float, norms, x: float) -> float:
    """Apply ``x -> theta + a (e^x - 1)`` for ``a`` in ``reversed(norms)`` (innermost last norm)."""
    for a in reversed(norms):
        if x > 700:
            return INF
        x = theta + a * math.expm1(x)
    return x


def _chain_slope(theta: float, norms, x: float) -> float:
    """Derivative in ``x`` of :func:`_phi_chain`."""
    d = 1.0
    for a in reversed(norms):
        if x > 700:
            return INF
        d *= a * math.exp(x)
        x = theta + a * math.expm1(x)
    return d


class CumulantModel:
    """Cumulant ``Gamma(theta) = gbar (exp(f_inf(theta)) - 1)`` of a kernel sequence.

    ``f_inf`` is the limit in ``M`` of the nested map
    ``f_M = phi_1(phi_2(...phi_M(theta)))`` with ``phi_i(x) = theta + a_i (e^x - 1)``
    and ``a_i`` the L1 norm of ``gamma_i``. Because the norm sequence is a
    prefix followed by a repeating cycle, ``f_inf = Pre(x*)`` where ``x*`` is the
    fixed point of the cycle map reached monotonically from ``theta``.
    Results are memoized behind a lock, so instances can be shared across threads.
    """

    def __init__(self, seq: KernelSequence, tol: float = 1e-12, divergence_cap: float = 50.0):
        if not tol > 0 or not divergence_cap > 0:
            raise ValidationError("tol and divergence_cap must be positive")
        self.seq = seq
        self.tol = tol
        self.divergence_cap = divergence_cap
        pre, cyc = seq.structure()
        self.prefix = tuple(float(a) for a in pre)
        self.cycle = tuple(float(a) for a in cyc)
        self.cycle_product = float(np.prod(cyc))
        self.gbar = seq.mean_rate
        self.rho = seq.rho
        self._lock = threading.Lock()
        self._f_cache: dict[float, float] = {}
        self._theta_c: float | None = None
        self.theta_c_bracket: tuple[float, float] | None = None

    # ---------------------------------------------------------------- recursion

    def f_M(self, theta: float, M: int) -> float:
        """The nested map truncated at depth ``M`` (``a_M`` innermost)."""
        x = theta
        for n in range(M, 0, -1):
            if x > 700:
                return INF
            x = theta + self.seq.norm_at(n) * math.expm1(x)
        return x

    def _cyc(self, theta, x):
        return _phi_chain(theta, self.cycle, x)

    def _fixed_point(self, theta: float) -> float:
        """Fixed point of the cycle map reached from ``theta``; ``inf`` if none."""
        if self.cycle_product == 0.0:
            return self._cyc(theta, theta)
        D = lambda x: self._cyc(theta, x) - x
        d0 = D(theta)
        if d0 == 0.0:
            return theta
        if theta < 0:
            # the map is bounded below by theta - max(norm); the root is the one left of theta
            lo = theta - 1.0
            return optimize.brentq(D, lo, theta, xtol=1e-15, rtol=1e-15)
        slope = lambda x: _chain_slope(theta, self.cycle, x) - 1.0
        if slope(theta) >= 0:
            return INF
        hi = max(1.0, 2 * theta)
        while slope(hi) < 0:
            hi *= 2
            if hi > 1e3:
                return INF
        xmin = optimize.brentq(slope, theta, hi, xtol=1e-15, rtol=1e-15)
        dmin = D(xmin)
        scale = TANGENCY_EPS * max(1.0, abs(xmin))
        if dmin > scale:
            return INF
        if dmin >= -scale:
            return xmin  # tangency: accept the double root
        return optimize.brentq(D, theta, xmin, xtol=1e-15, rtol=1e-15)

    def f_limit(self, theta: float) -> float:
        """``lim_M f_M(theta)`` on the extended real line (``inf`` past the blow-up)."""
        theta = float(theta)
        with self._lock:
            hit = self._f_cache.get(theta)
        if hit is not None:
            return hit
        x = self._fixed_point(theta)
        val = INF if x == INF else _phi_chain(theta, self.prefix, x)
        with self._lock:
            if len(self._f_cache) > 100_000:
                self._f_cache.clear()
            self._f_cache[theta] = val
        return val

    def f_iterate(self, theta: float, max_cycles: int = 1_000_000) -> float:
        """Brute-force limit over cycle-aligned depths ``M = L + qK``.

        Declares divergence once the iterate exceeds ``divergence_cap`` after three
        consecutive increasing increments; converges when the step is below ``tol``.
        """
        x, inc, grow = float(theta), INF, 0
        for _ in range(max_cycles):
            nxt = self._cyc(theta, x)
            step = nxt - x
            grow = grow + 1 if step > 0 and step > inc else 0
            inc = step
            x = nxt
            if x == INF or (x > self.divergence_cap and grow >= 3):
                return INF
            if abs(step) < self.tol:
                break
        return _phi_chain(theta, self.prefix, x)

    # ----------------------------------------------------------------- cumulant

    def gamma(self, theta: float) -> float:
        f = self.f_limit(theta)
        if f == INF or f > 700:
            return INF
        return self.gbar * math.expm1(f)

    def gamma_prime(self, theta: float, h: float | None = None) -> float:
        """Central difference with step ``1e-6 * max(1, |theta|)``."""
        h = 1e-6 * max(1.0, abs(theta)) if h is None else h
        return (self.gamma(theta + h) - self.gamma(theta - h)) / (2 * h)

    def _is_finite(self, theta: float) -> bool:
        return self.f_limit(theta) < INF

    def theta_c(self, cap: float = 1e3) -> float:
        """``sup{theta : Gamma(theta) < inf}`` by bisection; ``inf`` when no cycle can blow up.

        The lower bracket ``rho - 1 - log(rho)`` is always finite; the upper
        bracket doubles until divergence. If ``cap`` is reached the cap is
        returned and :attr:`theta_c_capped` is set.
        """
        with self._lock:
            if self._theta_c is not None:
                return self._theta_c
        self.theta_c_capped = False
        if self.cycle_product == 0.0 or self.rho == 0.0:
            val = INF
        else:
            lo = self.rho - 1 - math.log(self.rho)
            hi = max(2 * lo, 1e-3)
            while self._is_finite(hi):
                lo, hi = hi, 2 * hi
                if hi > cap:
                    self.theta_c_capped = True
                    break
            if self.theta_c_capped:
                val = cap
            else:
                while hi - lo > 1e-14 * max(1.0, lo):
                    mid = 0.5 * (lo + hi)
                    if self._is_finite(mid):
                        lo = mid
                    else:
                        hi = mid
                self.theta_c_bracket = (lo, hi)
                val = lo
        with self._lock:
            self._theta_c = val
        return val

    # ------------------------------------------------------------- rate function

    def rate_I(self, x: float) -> float:
        """``sup_theta {theta x - Gamma(theta)}``."""
        return legendre(self.gamma, x, self.theta_c(), self.gbar, self.gamma_prime)


def min_root(theta: float, rho: float) -> float:
    """Minimal solution of ``x = theta + rho (e^x - 1)`` on ``(-inf, log(1/rho)]``."""
    if not 0 <= rho < 1:
        raise ValidationError("rho must lie in [0, 1)")
    if rho == 0 or theta == 0:
        return float(theta)
    top = math.log(1 / rho)
    limit = rho - 1 - math.log(rho)
    g = lambda x: theta + rho * math.expm1(x) - x
    if theta > limit + 1e-15:
        raise NoSolutionError(f"no solution for theta = {theta} > rho - 1 - log(rho) = {limit}")
    if g(top) >= -1e-15:
        return top
    return optimize.brentq(g, theta - rho, top, xtol=1e-15, rtol=1e-15)


def legendre(cgf, x: float, theta_c: float, gbar: float, cgf_prime=None) -> float:
    """``sup_theta {theta x - cgf(theta)}`` for a convex ``cgf`` with ``cgf(0) = 0``.

    ``x < 0`` gives ``inf`` and ``x = 0`` gives ``-inf_theta cgf = gbar``. Otherwise
    the maximizer is bracketed by doubling and refined by bounded Brent search.
    """
    x = float(x)
    if x < 0:
        return INF
    if x == 0:
        return float(gbar)
    h = lambda th: th * x - cgf(th)
    d = cgf_prime if cgf_prime is not None else (lambda th: (cgf(th + 1e-6) - cgf(th - 1e-6)) / 2e-6)
    slope0 = d(0.0)
    if x < slope0:
        lo = -1.0
        while d(lo) > x:
            lo *= 2
            if lo < -1e6:
                break
        lo, hi = lo, 0.0
    else:
        if math.isinf(theta_c):
            hi = 1.0
            while d(hi) < x and hi < 700:
                hi *= 2
        else:
            hi = theta_c
        lo = 0.0
    res = optimize.minimize_scalar(lambda th: -h(th), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    best = max(-res.fun, h(lo), h(hi), 0.0)
    return float(best) if math.isfinite(best) else INF


def classical_rate(x: float, nu: float, h: float) -> float:
    """Closed-form rate for one kernel reused in every generation."""
    if x < 0:
        return INF
    if x == 0:
        return float(nu)
    return x * math.log(x / (nu + x * h)) - x + x * h + nu


def rate_J(constants, x: float) -> float:
    """Moderate-deviation rate ``x**2 / (2 sigma2)``."""
    s2 = constants.sigma2 if hasattr(constants, "sigma2") else float(constants)
    if not s2 > 0:
        raise ValidationError("sigma2 must be positive")
    return x * x / (2 * s2)


# ------------------------------------------------------------------ claim laws


class ClaimLaw:
    """I.i.d. claim sizes. Light-tailed laws have a finite MGF on ``theta < mgf_bound``."""

    light_tailed = True
    mgf_bound = INF

    def mean(self) -> float:
        raise NotImplementedError

    def log_mgf(self, theta: float) -> float:
        raise NotImplementedError

    def survival(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Inverse-CDF draws."""
        return self.ppf(rng.random(size))

    def integrated_tail(self, x: float) -> float:
        """``(1/E[C]) int_x^inf survival(y) dy`` (tail of the integrated-tail law)."""
        val, _ = integrate.quad(self.survival, x, INF, epsabs=1e-13, epsrel=1e-10, limit=500)
        return val / self.mean()

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Deterministic(ClaimLaw):
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("deterministic claim must be positive")

    def mean(self):
        return self.c

    def log_mgf(self, theta):
        return self.c * theta

    def survival(self, x):
        return np.where(np.asarray(x) < self.c, 1.0, 0.0)

    def ppf(self, u):
        return np.full(np.shape(u), self.c)

    def integrated_tail(self, x):
        return max(0.0, 1 - x / self.c)

    def to_dict(self):
        return {"family": "deterministic", "c": self.c}


@dataclass(frozen=True)
class ExponentialClaims(ClaimLaw):
    mean_value: float

    def __post_init__(self):
        if not self.mean_value > 0:
            raise ValidationError("exponential claim mean must be positive")

    @property
    def mgf_bound(self):
        return 1 / self.mean_value

    def mean(self):
        return self.mean_value

    def log_mgf(self, theta):
        return INF if theta >= self.mgf_bound else -math.log1p(-self.mean_value * theta)

    def survival(self, x):
        return np.exp(-np.maximum(np.asarray(x, float), 0) / self.mean_value)

    def ppf(self, u):
        return -self.mean_value * np.log1p(-np.asarray(u))

    def integrated_tail(self, x):
        return float(self.survival(x))

    def to_dict(self):
        return {"family": "exponential", "mean": self.mean_value}


@dataclass(frozen=True)
class GammaClaims(ClaimLaw):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValidationError("gamma claims need shape, scale > 0")

    @property
    def mgf_bound(self):
        return 1 / self.scale

    def mean(self):
        return self.shape * self.scale

    def log_mgf(self, theta):
        return INF if theta >= self.mgf_bound else -self.shape * math.log1p(-self.scale * theta)

    def survival(self, x):
        return special.gammaincc(self.shape, np.maximum(np.asarray(x, float), 0) / self.scale)

    def ppf(self, u):
        return self.scale * special.gammaincinv(self.shape, np.asarray(u))

    def to_dict(self):
        return {"family": "gamma", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class ParetoClaims(ClaimLaw):
    """Survival ``(1 + x/scale)**-(alpha + 1)``, so the integrated tail decays like ``x**-alpha``."""

    alpha: float
    scale: float
    light_tailed = False
    mgf_bound = 0.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.scale > 0):
            raise ValidationError("pareto claims need alpha, scale > 0")

    def mean(self):
        return self.scale / self.alpha

    def log_mgf(self, theta):
        if theta > 0:
            return INF
        if theta == 0:
            return 0.0
        val, _ = integrate.quad(lambda x: math.exp(theta * x) * (self.alpha + 1) / self.scale
                                * (1 + x / self.scale) ** (-self.alpha - 2), 0, INF)
        return math.log(val)

    def survival(self, x):
        return (1 + np.maximum(np.asarray(x, float), 0) / self.scale) ** (-(self.alpha + 1))

    def ppf(self, u):
        return self.scale * ((1 - np.asarray(u)) ** (-1 / (self.alpha + 1)) - 1)

    def integrated_tail(self, x):
        return float((1 + max(x, 0.0) / self.scale) ** (-self.alpha))

    def to_dict(self):
        return {"family": "pareto", "alpha": self.alpha, "scale": self.scale}


@dataclass(frozen=True)
class WeibullClaims(ClaimLaw):
    """Survival ``exp(-(x/scale)**shape)`` with ``shape < 1`` (heavy-tailed)."""

    shape: float
    scale: float
    light_tailed = False
    mgf_bound = 0.0

    def __post_init__(self):
        if not (0 < self.shape < 1 and self.scale > 0):
            raise ValidationError("weibull claims need 0 < shape < 1 and scale > 0")

    def mean(self):
        return self.scale * math.gamma(1 + 1 / self.shape)

    def log_mgf(self, theta):
        if theta > 0:
            return INF
        if theta == 0:
            return 0.0
        val, _ = integrate.quad(lambda x: math.exp(theta * x - (x / self.scale) ** self.shape), 0, INF)
        return math.log(1 + theta * val)

    def survival(self, x):
        return np.exp(-(np.maximum(np.asarray(x, float), 0) / self.scale) ** self.shape)

    def ppf(self, u):
        return self.scale * (-np.log1p(-np.asarray(u))) ** (1 / self.shape)

    def to_dict(self):
        return {"family": "weibull", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class LogNormalClaims(ClaimLaw):
    mu: float
    sigma: float
    light_tailed = False
    mgf_bound = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("lognormal claims need sigma > 0")

    def mean(self):
        return math.exp(self.mu + self.sigma**2 / 2)

    def log_mgf(self, theta):
        if theta > 0:
            return INF
        if theta == 0:
            return 0.0
        # integrand vanishes beyond |z| = 40; capping the exponent avoids overflow
        f = lambda z: math.exp(theta * math.exp(min(self.mu + self.sigma * z, 700.0)) - z * z / 2)
        val, _ = integrate.quad(f, -40.0, 40.0, points=[0.0], limit=200)
        return math.log(val / math.sqrt(2 * math.pi))

    def survival(self, x):
        x = np.maximum(np.asarray(x, float), 1e-300)
        return special.ndtr(-(np.log(x) - self.mu) / self.sigma)

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * special.ndtri(np.asarray(u)))

    def to_dict(self):
        return {"family": "lognormal", "mu": self.mu, "sigma": self.sigma}


_CLAIMS = {
    "deterministic": lambda d: Deterministic(float(d["c"])),
    "exponential": lambda d: ExponentialClaims(float(d["mean"])),
    "gamma": lambda d: GammaClaims(float(d["shape"]), float(d["scale"])),
    "pareto": lambda d: ParetoClaims(float(d["alpha"]), float(d["scale"])),
    "weibull": lambda d: WeibullClaims(float(d["shape"]), float(d["scale"])),
    "lognormal": lambda d: LogNormalClaims(float(d["mu"]), float(d["sigma"])),
}


def claim_law_from_dict(d: dict) -> ClaimLaw:
    fam = d.get("family")
    if fam not in _CLAIMS:
        raise ValidationError(f"unknown claim family {fam!r}; expected one of {sorted(_CLAIMS)}")
    try:
        return _CLAIMS[fam](d)
    except KeyError as exc:
        raise ValidationError(f"claim family {fam!r} is missing parameter {exc}") from None


# ------------------------------------------------------------ compound cumulant


def gamma_C(model: CumulantModel, law: ClaimLaw, theta: float) -> float:
    """``Gamma(log E[exp(theta C)])``; ``inf`` outside the claim MGF domain."""
    lm = law.log_mgf(theta)
    return INF if lm == INF else model.gamma(lm)


def theta_c_compound(model: CumulantModel, law: ClaimLaw) -> float:
    """``sup{theta : Gamma_C(theta) < inf}``."""
    tc = model.theta_c()
    if not law.light_tailed:
        return 0.0
    if isinstance(law, Deterministic):
        return tc / law.c
    # log-MGF is increasing for positive claims; invert it at theta_c or stop at the MGF bound
    if math.isinf(tc):
        return law.mgf_bound
    hi = law.mgf_bound
    if math.isinf(hi):
        hi = 1.0
        while law.log_mgf(hi) < tc:
            hi *= 2
    if law.log_mgf(hi * (1 - 1e-15)) <= tc:
        return hi
    return optimize.brentq(lambda th: law.log_mgf(th) - tc, 0.0, hi * (1 - 1e-15), xtol=1e-15)


def gamma_C_prime(model: CumulantModel, law: ClaimLaw, theta: float, h: float | None = None) -> float:
    h = 1e-6 * max(1.0, abs(theta)) if h is None else h
    return (gamma_C(model, law, theta + h) - gamma_C(model, law, theta - h)) / (2 * h)


def rate_IC(model: CumulantModel, law: ClaimLaw, x: float) -> float:
    """``sup_theta {theta x - Gamma_C(theta)}``."""
    if not law.light_tailed and x > 0:
        # theta is confined to (-inf, 0]
        res = optimize.minimize_scalar(lambda th: -(th * x - gamma_C(model, law, th)),
                                       bounds=(-50.0, 0.0), method="bounded", options={"xatol": 1e-12})
        return max(-res.fun, 0.0)
    return legendre(lambda th: gamma_C(model, law, th), x, theta_c_compound(model, law), model.gbar,
                    lambda th: gamma_C_prime(model, law, th))


# ------------------------------------------------------------ Monte Carlo check


def log_mean_exp(values: np.ndarray) -> tuple[float, np.ndarray]:
    """``log(mean(exp(values)))`` and its leave-one-out versions (max-shifted)."""
    v = np.asarray(values, float)
    n = v.size
    top = v.max()
    w = np.exp(v - top)
    S = w.sum()
    full = top + math.log(S / n)
    with np.errstate(divide="ignore"):
        loo = top + np.log(np.maximum(S - w, 0.0) / (n - 1)) if n > 1 else np.array([full])
    return full, loo


def empirical_cumulant(counts: np.ndarray, theta: float, t: float) -> tuple[float, float]:
    """``(1/t) log mean exp(theta N_t)`` over replications with a jackknife standard error."""
    counts = np.asarray(counts, float)
    if theta == 0:
        return 0.0, 0.0
    full, loo = log_mean_exp(theta * counts)
    n = counts.size
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)) / t if n > 1 else INF
    return full / t, se
