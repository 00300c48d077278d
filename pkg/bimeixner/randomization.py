"""Randomization laws h(dtheta) = C exp(p theta - r kappa(theta)) and their moments.

Four of the five families have closed-form transformed laws (normal, gamma,
beta); the hyperbolic secant family is handled by quadrature and a tabulated
inverse CDF on (-pi, pi).
"""

import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import nef_family, quadrature
from .errors import ArgumentError, DomainError
from .nef_family import FamilyKind

logger = logging.getLogger(__name__)

ASSUMPTION_GRID_POINTS = 40
ASSUMPTION_THRESHOLD = 1e-12
ASSUMPTION_MIN_DELTA = 1e-300
ASSUMPTION_TAIL_FRACTION = 0.5
ASSUMPTION_SLACK = 1e-12
THETA_TABLE_TOL = 1e-8
MOMENT_QUADRATURE_TOL = 1e-11

_theta_tables = {}
_theta_lock = threading.Lock()


def admissible_region(family):
    """Human-readable admissible region for error messages."""
    kind = family.kind
    if kind is FamilyKind.WIENER:
        return "r > 0"
    if kind is FamilyKind.POISSON:
        return "p > 0, r > 0"
    if kind is FamilyKind.HYPERBOLIC_SECANT:
        return "r > 1/2"
    return "p > 0, r > 1"


def is_admissible(family, p, r):
    if not (math.isfinite(p) and math.isfinite(r)):
        return False
    kind = family.kind
    if kind is FamilyKind.WIENER:
        return r > 0.0
    if kind is FamilyKind.POISSON:
        return p > 0.0 and r > 0.0
    if kind is FamilyKind.HYPERBOLIC_SECANT:
        return r > 0.5
    return p > 0.0 and r > 1.0


def validate_params(family, p, r):
    if not is_admissible(family, p, r):
        raise ArgumentError(
            f"(p={p}, r={r}) is outside the admissible region {admissible_region(family)} "
            f"of the {family} family"
        )


@dataclass(frozen=True)
class RandomizationLaw:
    family: nef_family.FamilySpec
    p: float
    r: float
    log_C: float

    @classmethod
    def create(cls, family, p, r):
        p, r = float(p), float(r)
        validate_params(family, p, r)
        return cls(family, p, r, normalizing_constant(family, p, r))

    @property
    def mean(self):
        return self.p / self.r


@dataclass(frozen=True)
class KPrimeMoments:
    mean: float
    variance: float

    @property
    def std(self):
        return math.sqrt(self.variance)


def log_partition(family, a, b, method="auto", rel_tol=quadrature.DEFAULT_REL_TOL):
    """log of the integral of exp(a theta - b kappa(theta)) over the tilt domain.

    With ``method="auto"`` the closed forms are used for every family except
    the hyperbolic secant one; ``method="quadrature"`` forces numerical
    integration (used to cross-check the closed forms).
    """
    a, b = float(a), float(b)
    kind = family.kind
    if method not in ("auto", "quadrature"):
        raise ArgumentError(f"unknown log_partition method {method!r}")
    if method == "auto" and kind is not FamilyKind.HYPERBOLIC_SECANT:
        return _closed_log_partition(family, a, b)
    return _quadrature_log_partition(family, a, b, rel_tol)


def _closed_log_partition(family, a, b):
    kind = family.kind
    if kind is FamilyKind.WIENER:
        if not b > 0.0:
            raise ArgumentError(f"Gaussian partition function needs b > 0, got {b}")
        return 0.5 * math.log(2.0 * math.pi / b) + a * a / (2.0 * b)
    if kind is FamilyKind.POISSON:
        if not (a > 0.0 and b > 0.0):
            raise ArgumentError(f"Poisson partition function needs a > 0 and b > 0, got ({a}, {b})")
        return b + special.gammaln(a) - a * math.log(b)
    if kind is FamilyKind.GAMMA:
        if not (a > 0.0 and b > -1.0):
            raise ArgumentError(f"gamma partition function needs a > 0 and b > -1, got ({a}, {b})")
        return a + special.gammaln(b + 1.0) - (b + 1.0) * math.log(a)
    if kind is FamilyKind.NEGATIVE_BINOMIAL:
        if not (a > 0.0 and b > -1.0):
            raise ArgumentError(
                f"negative binomial partition function needs a > 0 and b > -1, got ({a}, {b})"
            )
        q = family.q
        return -b * math.log1p(-q) - a * math.log(q) + special.betaln(a, b + 1.0)
    raise ArgumentError(f"no closed-form partition function for {family}")


def _quadrature_log_partition(family, a, b, rel_tol):
    lo, hi = nef_family.theta_domain(family)
    mode = None
    if b > 0.0:
        try:
            mode = nef_family.mean_to_theta(family, a / b)
        except DomainError:
            mode = None

    def log_f(theta):
        return a * theta - b * nef_family.kappa(family, theta)

    value, result = quadrature.log_integrate(log_f, lo, hi, rel_tol=rel_tol, mode=mode)
    logger.debug("Partition function of %s at (%g, %g) by quadrature: %.12g (%d intervals)",
                 family, a, b, value, result.subdivisions)
    return value


def normalizing_constant(family, p, r, method="auto"):
    """log C(p, r), the log normalizing constant of h(dtheta)."""
    validate_params(family, float(p), float(r))
    return -log_partition(family, p, r, method=method)


def theta_log_density(law, theta, strict=False):
    """log h(theta); -inf off the open domain unless ``strict`` asks for DomainError."""
    theta = np.asarray(theta, dtype=float)
    inside = nef_family.in_domain(law.family, theta)
    if strict and not np.all(inside):
        raise DomainError(f"theta={theta} is outside the domain of {law.family}")
    with np.errstate(all="ignore"):
        values = law.log_C + law.p * theta - law.r * nef_family.kappa(law.family, theta)
    values = np.where(inside, values, -np.inf)
    return float(values) if values.ndim == 0 else values


def _secant_theta_table(p, r):
    key = (p, r)
    table = _theta_tables.get(key)
    if table is not None:
        return table
    with _theta_lock:
        table = _theta_tables.get(key)
        if table is None:
            law = RandomizationLaw.create(nef_family.FamilySpec(FamilyKind.HYPERBOLIC_SECANT), p, r)
            logger.debug("Tabulating secant randomization law for p=%g r=%g", p, r)
            table = quadrature.tabulate_inverse_cdf(
                lambda theta: np.exp(theta_log_density(law, theta)),
                (-math.pi, math.pi), tol=THETA_TABLE_TOL,
            )
            _theta_tables[key] = table
    return table


def sample_theta(law, rng, size=None):
    """Draw Theta from h(dtheta); every value is strictly inside the tilt domain."""
    family, p, r = law.family, law.p, law.r
    kind = family.kind
    tiny = np.finfo(float).tiny
    if kind is FamilyKind.WIENER:
        theta = rng.normal(p / r, math.sqrt(1.0 / r), size)
    elif kind is FamilyKind.POISSON:
        theta = np.log(np.maximum(rng.gamma(p, 1.0 / r, size), tiny))
    elif kind is FamilyKind.GAMMA:
        theta = 1.0 - np.maximum(rng.gamma(r + 1.0, 1.0 / p, size), tiny)
    elif kind is FamilyKind.NEGATIVE_BINOMIAL:
        weight = np.clip(rng.beta(p, r + 1.0, size), tiny, np.nextafter(1.0, 0.0))
        theta = np.log(weight) - math.log(family.q)
        theta = np.minimum(theta, np.nextafter(-math.log(family.q), -math.inf))
    else:
        theta = _secant_theta_table(p, r)(rng.random(size))
    return float(theta) if size is None else np.asarray(theta, dtype=float)


def kprime_moments(law):
    """Closed-form mean p/r and variance V(m)/(r - a) of kappa'(Theta)."""
    coeffs = nef_family.variance_coeffs(law.family)
    if not law.r > coeffs.a:
        raise ArgumentError(f"var(kappa'(Theta)) is infinite for r={law.r} <= a={coeffs.a}")
    m = law.p / law.r
    return KPrimeMoments(m, coeffs(m) / (law.r - coeffs.a))


def kprime_moments_by_quadrature(law, rel_tol=MOMENT_QUADRATURE_TOL):
    """Mean and variance of kappa'(Theta) by direct integration against h."""
    family = law.family
    lo, hi = nef_family.theta_domain(family)
    mode = nef_family.mean_to_theta(family, law.mean)

    def weighted(power, center):
        def f(theta):
            density = np.exp(theta_log_density(law, theta))
            with np.errstate(all="ignore"):
                value = (nef_family.kappa_prime(family, theta) - center) ** power * density
            return np.where(density > 0.0, value, 0.0)
        return quadrature.integrate(f, lo, hi, rel_tol=rel_tol, abs_tol=1e-14,
                                    points=(mode,)).value

    mass = weighted(0, 0.0)
    mean = weighted(1, 0.0) / mass
    variance = weighted(2, mean) / mass
    return KPrimeMoments(mean, variance)


def moment_order(family, r):
    """Supremum of k with E|kappa'(Theta)|^k finite."""
    kind = family.kind
    if kind in (FamilyKind.WIENER, FamilyKind.POISSON):
        return math.inf
    if kind is FamilyKind.HYPERBOLIC_SECANT:
        return 2.0 * r + 1.0
    return r + 1.0


def warn_if_heavy_tailed(family, r, needed, purpose):
    """Log a warning when fewer than ``needed`` moments of kappa'(Theta) exist."""
    order = moment_order(family, r)
    if order <= needed:
        logger.warning(
            "%s with %s at r=%g: only moments of order < %g exist, %s needs %d; "
            "standard errors are unreliable", purpose, family, r, order, purpose, needed,
        )
        return True
    return False


@dataclass(frozen=True)
class EndpointStatus:
    support_point: float
    side: str
    endpoint: float
    condition: str
    log_values: tuple
    passed: bool

    @property
    def final_log_value(self):
        return self.log_values[-1]


@dataclass(frozen=True)
class AssumptionReport:
    family: nef_family.FamilySpec
    p: float
    r: float
    support_points: tuple
    threshold: float
    endpoints: list = field(default_factory=list)
    heuristic: bool = True

    @property
    def passed(self):
        return all(status.passed for status in self.endpoints)

    @property
    def failures(self):
        return [status for status in self.endpoints if not status.passed]


def default_support_points(family):
    points = {0.0, nef_family.base_quantile(family, 0.5), nef_family.base_quantile(family, 0.999)}
    if nef_family.support(family)[0] == -math.inf:
        points.add(nef_family.base_quantile(family, 0.001))
    return sorted(points)


def _non_increasing(values):
    previous, following = values[:-1], values[1:]
    with np.errstate(invalid="ignore"):
        bound = np.where(np.isfinite(previous),
                         previous + ASSUMPTION_SLACK * np.maximum(1.0, np.abs(previous)), previous)
    return bool(np.all(following <= bound))


def check_assumptions(family, p, r, support_points=None, grid_points=ASSUMPTION_GRID_POINTS,
                      threshold=ASSUMPTION_THRESHOLD, min_delta=ASSUMPTION_MIN_DELTA):
    """Heuristic limit check of the two boundary conditions on h.

    For each support point x and each endpoint of the tilt domain, evaluates
    exp((p+x) theta - r kappa(theta)) and kappa'(theta) times the same factor
    along a geometric sequence of theta approaching the endpoint. A condition
    holds at an endpoint when the last value is below ``threshold`` and the
    log values do not increase over the last ``ASSUMPTION_TAIL_FRACTION`` of
    the sequence.
    """
    p, r = float(p), float(r)
    if support_points is None:
        support_points = default_support_points(family)
    deltas = np.geomspace(1e-1, min_delta, grid_points)
    tail = grid_points - max(2, int(grid_points * ASSUMPTION_TAIL_FRACTION))
    log_threshold = math.log(threshold)
    lo, hi = nef_family.theta_domain(family)
    report = AssumptionReport(family, p, r, tuple(float(x) for x in support_points), threshold)
    for x in report.support_points:
        for side, endpoint in (("lower", lo), ("upper", hi)):
            theta, kap, log_kp = nef_family.boundary_log_terms(family, side, deltas)
            with np.errstate(all="ignore"):
                log_mass = (p + x) * theta - r * kap
                log_mean = log_mass + log_kp
            for condition, values in (("mass", log_mass), ("mean", log_mean)):
                values = np.where(np.isnan(values), math.inf, values)
                passed = bool(values[-1] < log_threshold and _non_increasing(values[tail:]))
                report.endpoints.append(EndpointStatus(
                    x, side, endpoint, condition, tuple(float(v) for v in values), passed,
                ))
                if not passed:
                    logger.info("Boundary condition %s fails for %s at x=%g, theta -> %s",
                                condition, family, x, endpoint)
    return report
