"""The five Levy-Meixner families and their natural exponential families.

Each family is described by the cumulant function kappa of its base law
(xi_1), the open interval (theta0, theta1) on which kappa is finite, and the
quadratic variance function V(m) = a m^2 + b m + c with kappa'' = V(kappa').
The tilted process X^(theta) has independent increments whose law over a
time step t has mean t kappa'(theta) and variance t kappa''(theta).
"""

import logging
import math
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special, stats

from . import quadrature
from .errors import ArgumentError, DomainError

logger = logging.getLogger(__name__)

# number of exact gamma terms in the batch secant-family sampler
SECANT_SERIES_TERMS = 32
# largest dropped fourth cumulant of the series remainder, relative to the leading pair
SECANT_KAPPA4_TOL = 1e-4
MEIXNER_TAIL_MASS = 1e-12
MEIXNER_TABLE_TOL = 1e-6

_meixner_tables = {}
_meixner_lock = threading.Lock()


class FamilyKind(str, Enum):
    WIENER = "wiener"
    POISSON = "poisson"
    GAMMA = "gamma"
    NEGATIVE_BINOMIAL = "negative-binomial"
    HYPERBOLIC_SECANT = "hyperbolic-secant"


@dataclass(frozen=True)
class FamilySpec:
    kind: FamilyKind
    q: float = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if self.kind is FamilyKind.NEGATIVE_BINOMIAL:
            if self.q is None or not 0.0 < float(self.q) < 1.0:
                raise ArgumentError(f"negative binomial family needs 0 < q < 1, got {self.q}")
            object.__setattr__(self, "q", float(self.q))
        elif self.q is not None:
            raise ArgumentError(f"q is only meaningful for the negative binomial family")

    @classmethod
    def from_name(cls, name, q=None):
        kind = FamilyKind(name.lower().replace("_", "-"))
        if kind is FamilyKind.NEGATIVE_BINOMIAL and q is None:
            q = 0.5
        return cls(kind, q if kind is FamilyKind.NEGATIVE_BINOMIAL else None)

    @property
    def name(self):
        return self.kind.value

    @property
    def is_discrete(self):
        return self.kind in (FamilyKind.POISSON, FamilyKind.NEGATIVE_BINOMIAL)

    def __str__(self):
        if self.kind is FamilyKind.NEGATIVE_BINOMIAL:
            return f"{self.name}(q={self.q:g})"
        return self.name


@dataclass(frozen=True)
class CumulantValues:
    kappa: float
    kappa_prime: float
    kappa_double_prime: float


@dataclass(frozen=True)
class VarianceCoeffs:
    a: float
    b: float
    c: float

    def __call__(self, m):
        return self.a * m * m + self.b * m + self.c

    def derivative(self, m):
        return 2.0 * self.a * m + self.b


def theta_domain(family):
    """Open interval (theta0, theta1) on which kappa is finite."""
    kind = family.kind
    if kind is FamilyKind.GAMMA:
        return (-math.inf, 1.0)
    if kind is FamilyKind.NEGATIVE_BINOMIAL:
        return (-math.inf, -math.log(family.q))
    if kind is FamilyKind.HYPERBOLIC_SECANT:
        return (-math.pi, math.pi)
    return (-math.inf, math.inf)


def support(family):
    """Support (lower, upper) of the base law and of every increment."""
    if family.kind in (FamilyKind.WIENER, FamilyKind.HYPERBOLIC_SECANT):
        return (-math.inf, math.inf)
    return (0.0, math.inf)


def variance_coeffs(family):
    kind = family.kind
    if kind is FamilyKind.WIENER:
        return VarianceCoeffs(0.0, 0.0, 1.0)
    if kind is FamilyKind.POISSON:
        return VarianceCoeffs(0.0, 1.0, 0.0)
    if kind is FamilyKind.GAMMA:
        return VarianceCoeffs(1.0, 0.0, 0.0)
    if kind is FamilyKind.NEGATIVE_BINOMIAL:
        return VarianceCoeffs(1.0, 1.0, 0.0)
    return VarianceCoeffs(0.5, 0.0, 0.5)


def in_domain(family, theta):
    lo, hi = theta_domain(family)
    theta = np.asarray(theta, dtype=float)
    return (theta > lo) & (theta < hi)


def _require_domain(family, theta):
    if not np.all(in_domain(family, theta)):
        lo, hi = theta_domain(family)
        raise DomainError(f"theta={theta} is outside the open domain ({lo}, {hi}) of {family}")


def _require_time(t):
    if not t > 0.0:
        raise ArgumentError(f"time length must be positive, got {t}")


def kappa(family, theta):
    """Cumulant function, vectorized; no domain check."""
    theta = np.asarray(theta, dtype=float)
    kind = family.kind
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if kind is FamilyKind.WIENER:
            return 0.5 * theta * theta
        if kind is FamilyKind.POISSON:
            return np.expm1(theta)
        if kind is FamilyKind.GAMMA:
            return -np.log1p(-theta)
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            q = family.q
            return math.log1p(-q) - np.log1p(-q * np.exp(theta))
        return -2.0 * np.log(np.cos(0.5 * theta))


def kappa_prime(family, theta):
    theta = np.asarray(theta, dtype=float)
    kind = family.kind
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if kind is FamilyKind.WIENER:
            return theta
        if kind is FamilyKind.POISSON:
            return np.exp(theta)
        if kind is FamilyKind.GAMMA:
            return 1.0 / (1.0 - theta)
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            tilted = family.q * np.exp(theta)
            return tilted / (1.0 - tilted)
        return np.tan(0.5 * theta)


def kappa_double_prime(family, theta):
    theta = np.asarray(theta, dtype=float)
    kind = family.kind
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if kind is FamilyKind.WIENER:
            return np.ones_like(theta)
        if kind is FamilyKind.POISSON:
            return np.exp(theta)
        if kind is FamilyKind.GAMMA:
            return 1.0 / (1.0 - theta) ** 2
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            tilted = family.q * np.exp(theta)
            return tilted / (1.0 - tilted) ** 2
        return 0.5 / np.cos(0.5 * theta) ** 2


def cumulants(family, theta):
    """(kappa, kappa', kappa'') at an interior theta."""
    theta = float(theta)
    _require_domain(family, theta)
    return CumulantValues(
        float(kappa(family, theta)),
        float(kappa_prime(family, theta)),
        float(kappa_double_prime(family, theta)),
    )


def mean_to_theta(family, m):
    """Inverse of the mean map theta -> kappa'(theta)."""
    m = np.asarray(m, dtype=float)
    kind = family.kind
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is FamilyKind.WIENER:
            theta = m
        elif kind is FamilyKind.POISSON:
            theta = np.log(m)
        elif kind is FamilyKind.GAMMA:
            theta = 1.0 - 1.0 / m
        elif kind is FamilyKind.NEGATIVE_BINOMIAL:
            theta = np.log(m / ((1.0 + m) * family.q))
        else:
            theta = 2.0 * np.arctan(m)
    if not np.all(in_domain(family, theta)):
        raise DomainError(f"mean {m} is outside the mean domain of {family}")
    return float(theta) if theta.ndim == 0 else theta


def boundary_log_terms(family, side, delta):
    """Evaluate theta, kappa(theta), log|kappa'(theta)| near an endpoint.

    ``side`` is "lower" or "upper". For a finite endpoint theta sits at
    distance ``delta`` inside it; for an infinite one theta = -/+ 1/delta.
    The expressions avoid the cancellation of evaluating kappa at
    theta1 - delta directly.
    """
    delta = np.asarray(delta, dtype=float)
    lo, hi = theta_domain(family)
    endpoint = lo if side == "lower" else hi
    sign = 1.0 if side == "lower" else -1.0
    kind = family.kind
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if not math.isfinite(endpoint):
            theta = -sign / delta
            kap = kappa(family, theta)
            if kind is FamilyKind.POISSON:
                log_kp = theta
            elif kind is FamilyKind.NEGATIVE_BINOMIAL:
                log_kp = math.log(family.q) + theta - np.log1p(-family.q * np.exp(theta))
            else:
                log_kp = np.log(np.abs(kappa_prime(family, theta)))
            return theta, kap, log_kp
        theta = endpoint + sign * delta
        if kind is FamilyKind.GAMMA:
            return theta, -np.log(delta), -np.log(delta)
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            gap = -np.expm1(-delta)
            return theta, math.log1p(-family.q) - np.log(gap), -delta - np.log(gap)
        # hyperbolic secant: cos(theta/2) = sin(delta/2) at either endpoint
        half = np.sin(0.5 * delta)
        return theta, -2.0 * np.log(half), -np.log(np.tan(0.5 * delta))


def increment_log_density(family, theta, t, x):
    """Log density (log mass for discrete families) of X_t^(theta), vectorized in x."""
    _require_domain(family, theta)
    _require_time(t)
    theta = float(theta)
    t = float(t)
    x = np.asarray(x, dtype=float)
    kind = family.kind
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind is FamilyKind.WIENER:
            return -0.5 * (x - t * theta) ** 2 / t - 0.5 * math.log(2.0 * math.pi * t)
        if kind is FamilyKind.GAMMA:
            rate = 1.0 - theta
            out = (t * math.log(rate) + (t - 1.0) * np.log(x) - rate * x - special.gammaln(t))
            return np.where(x > 0.0, out, -np.inf)
        if kind is FamilyKind.HYPERBOLIC_SECANT:
            head = 2.0 * t * math.log(2.0 * math.cos(0.5 * theta)) - math.log(2.0 * math.pi)
            return head - special.gammaln(2.0 * t) + quadrature.log_abs_gamma_sq(t, x) + theta * x
        integer = (x >= 0.0) & (x == np.floor(x))
        k = np.where(integer, x, 0.0)
        if kind is FamilyKind.POISSON:
            lam = t * math.exp(theta)
            out = k * math.log(lam) - lam - special.gammaln(k + 1.0)
        else:
            tilted = family.q * math.exp(theta)
            out = (special.gammaln(t + k) - special.gammaln(t) - special.gammaln(k + 1.0)
                   + t * math.log1p(-tilted) + k * math.log(tilted))
        return np.where(integer, out, -np.inf)


def increment_density(family, theta, t, x):
    """Density (or mass) of X_t^(theta) at x; zero off the support."""
    value = np.exp(increment_log_density(family, theta, t, x))
    return float(value) if np.ndim(value) == 0 else value


def _meixner_bounds(t, theta):
    """Symmetric-in-spirit window around the mean holding all but 1e-12 of the mass."""
    mean = t * math.tan(0.5 * theta)
    sd = math.sqrt(0.5 * t) / math.cos(0.5 * theta)

    def tail(lo, hi):
        return quadrature.integrate(
            lambda x: increment_density(FamilySpec(FamilyKind.HYPERBOLIC_SECANT), theta, t, x),
            lo, hi, rel_tol=1e-8, abs_tol=1e-16,
        ).value

    width = 10.0 * sd
    while tail(mean + width, math.inf) >= 0.5 * MEIXNER_TAIL_MASS:
        width *= 1.5
    upper = mean + width
    width = 10.0 * sd
    while tail(-math.inf, mean - width) >= 0.5 * MEIXNER_TAIL_MASS:
        width *= 1.5
    return mean - width, upper


def meixner_inverse_cdf(t, theta):
    """Cached inverse-CDF table of X_t^(theta) for the hyperbolic secant family."""
    key = (float(t), float(theta))
    table = _meixner_tables.get(key)
    if table is not None:
        return table
    with _meixner_lock:
        table = _meixner_tables.get(key)
        if table is None:
            family = FamilySpec(FamilyKind.HYPERBOLIC_SECANT)
            bounds = _meixner_bounds(t, theta)
            logger.debug("Tabulating Meixner CDF for t=%g theta=%g on %s", t, theta, bounds)
            table = quadrature.tabulate_inverse_cdf(
                lambda x: increment_density(family, theta, t, x), bounds, tol=MEIXNER_TABLE_TOL,
            )
            _meixner_tables[key] = table
    return table


def increment_sample(family, theta, t, rng):
    """One draw of X_t^(theta)."""
    _require_domain(family, theta)
    _require_time(t)
    if family.kind is FamilyKind.HYPERBOLIC_SECANT:
        return float(meixner_inverse_cdf(t, theta)(rng.random()))
    return float(increment_samples(family, np.array([float(theta)]), t, rng)[0])


def secant_remainder_kappa4_ratio(thetas, terms):
    """Bound on the fourth cumulant the normal remainder drops, per unit of the leading pair.

    The remainder after ``terms`` gamma pairs has fourth cumulant
    12t sum_{k >= terms} ((c_k - theta)^-4 + (c_k + theta)^-4), bounded by
    4t/(pi ((2 terms - 1) pi - |theta|)^3); the k = 0 pair contributes
    12t ((pi - theta)^-4 + (pi + theta)^-4). The ratio does not depend on t.
    """
    if terms < 1:
        raise ArgumentError(f"the secant series needs at least one term, got {terms}")
    thetas = np.abs(np.asarray(thetas, dtype=float))
    dropped = 4.0 / (math.pi * ((2.0 * terms - 1.0) * math.pi - thetas) ** 3)
    leading = 12.0 * ((math.pi - thetas) ** -4 + (math.pi + thetas) ** -4)
    return dropped / leading


def _secant_series(thetas, t, rng, terms):
    """Tilted Meixner draws from the gamma-product form of its characteristic function.

    X = sum_k A_k/(c_k - theta) - B_k/(c_k + theta), c_k = (2k+1) pi,
    A_k, B_k ~ Gamma(2t, 1); the remainder beyond ``terms`` is replaced by a
    normal with the exact remaining mean and variance.
    """
    ratio = float(np.max(secant_remainder_kappa4_ratio(thetas, terms), initial=0.0))
    if ratio > SECANT_KAPPA4_TOL:
        raise ArgumentError(f"{terms} secant series terms drop a relative fourth cumulant of "
                            f"{ratio:.2g}, above {SECANT_KAPPA4_TOL:g}")
    c = (2.0 * np.arange(terms) + 1.0) * math.pi
    up = 1.0 / (c[None, :] - thetas[:, None])
    down = 1.0 / (c[None, :] + thetas[:, None])
    shape = (thetas.size, terms)
    head = (rng.gamma(2.0 * t, size=shape) * up).sum(axis=1) - \
        (rng.gamma(2.0 * t, size=shape) * down).sum(axis=1)
    head_mean = 2.0 * t * (up - down).sum(axis=1)
    head_var = 2.0 * t * (up * up + down * down).sum(axis=1)
    rest_mean = t * np.tan(0.5 * thetas) - head_mean
    rest_var = np.maximum(0.5 * t / np.cos(0.5 * thetas) ** 2 - head_var, 0.0)
    return head + rest_mean + np.sqrt(rest_var) * rng.standard_normal(thetas.size)


def increment_samples(family, thetas, t, rng, secant_terms=SECANT_SERIES_TERMS):
    """Independent draws of X_t^(theta_i), one per entry of ``thetas``."""
    _require_time(t)
    thetas = np.asarray(thetas, dtype=float)
    _require_domain(family, thetas)
    kind = family.kind
    if kind is FamilyKind.WIENER:
        return rng.normal(t * thetas, math.sqrt(t))
    if kind is FamilyKind.POISSON:
        return rng.poisson(t * np.exp(thetas)).astype(float)
    if kind is FamilyKind.GAMMA:
        return rng.gamma(t, 1.0 / (1.0 - thetas))
    if kind is FamilyKind.NEGATIVE_BINOMIAL:
        tilted = family.q * np.exp(thetas)
        return rng.poisson(rng.gamma(t, tilted / (1.0 - tilted))).astype(float)
    return _secant_series(thetas, float(t), rng, secant_terms)


def base_quantile(family, level):
    """Quantile of the untilted law of xi_1."""
    kind = family.kind
    if kind is FamilyKind.WIENER:
        return float(stats.norm.ppf(level))
    if kind is FamilyKind.POISSON:
        return float(stats.poisson.ppf(level, 1.0))
    if kind is FamilyKind.GAMMA:
        return float(stats.expon.ppf(level))
    if kind is FamilyKind.NEGATIVE_BINOMIAL:
        return float(stats.nbinom.ppf(level, 1.0, 1.0 - family.q))
    return float(meixner_inverse_cdf(1.0, 0.0)(level))
