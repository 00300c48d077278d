"""Transition kernels of the randomized process Y.

Forward kernels are Doob ratios H(t, y)/H(s, x) times the base increment
density, with H(t, x) = C(p, r)/C(p + x, r + t). Reversed (bridge) kernels
are Bayes ratios of base densities and do not depend on (p, r).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import nef_family, quadrature, randomization
from .errors import ArgumentError
from .nef_family import FamilyKind

logger = logging.getLogger(__name__)

UNDERFLOW_DENSITY = 1e-300
GOF_BINS = 30
GOF_LEVEL = 0.001
MIN_EXPECTED = 5.0
ENUMERATION_TAIL = 1e-12
ENUMERATION_LIMIT = 100_000
QUADRATURE_GOF_PATHS = 2000


@dataclass(frozen=True)
class KernelContext:
    law: randomization.RandomizationLaw
    tolerance: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.tolerance <= 1e-4:
            raise ArgumentError(f"kernel tolerance must lie in (0, 1e-4], got {self.tolerance}")

    @property
    def family(self):
        return self.law.family

    @property
    def rel_tol(self):
        return max(self.tolerance, 1e-14)


@dataclass(frozen=True)
class KernelEvaluation:
    value: float
    out_of_support: bool = False


@dataclass(frozen=True)
class ChiSquareReport:
    statistic: float
    dof: int
    p_value: float
    n: int
    level: float
    passed: bool
    cells: int = 0


def _scalar_or_array(values):
    values = np.asarray(values, dtype=float)
    return float(values) if values.ndim == 0 else values


def log_h_function(ctx, t, x, method="auto"):
    """log H(t, x); closed forms for four families, quadrature for the secant family."""
    t = float(t)
    if t < 0.0:
        raise ArgumentError(f"H(t, x) needs t >= 0, got {t}")
    law = ctx.law

    def one(xi):
        return law.log_C + randomization.log_partition(
            law.family, law.p + xi, law.r + t, method=method, rel_tol=ctx.rel_tol,
        )

    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return one(float(x))
    return np.array([one(float(xi)) for xi in x.ravel()]).reshape(x.shape)


def h_function(ctx, t, x, method="auto"):
    """H(t, x) = E[exp(Theta x - t kappa(Theta))] under the randomization law."""
    return _scalar_or_array(np.exp(log_h_function(ctx, t, x, method=method)))


def _check_times(s, t):
    if not 0.0 <= s < t:
        raise ArgumentError(f"transition times need 0 <= s < t, got s={s}, t={t}")


def forward_transition_density(ctx, s, x, t, y):
    """Density (mass) of Y_t at y given Y_s = x, vectorized over y."""
    s, t, x = float(s), float(t), float(x)
    _check_times(s, t)
    y = np.asarray(y, dtype=float)
    base = nef_family.increment_log_density(ctx.family, 0.0, t - s, y - x)
    out = np.zeros(y.shape)
    alive = np.isfinite(base)
    if np.any(alive):
        log_ratio = log_h_function(ctx, t, y[alive]) - log_h_function(ctx, s, x)
        out[alive] = np.exp(base[alive] + log_ratio)
    return _scalar_or_array(out)


def _forward_moments(ctx, s, x, t):
    p, r = ctx.law.p, ctx.law.r
    mean = x + (t - s) * (x + p) / (s + r)
    return mean, (t - s) + (t - s) ** 2 / (s + r)


def _discrete_cdf(pmf, lower, upper):
    """CDF at each ``upper`` of an integer-lattice pmf starting at ``lower``."""
    upper = np.asarray(upper, dtype=float)
    top = int(np.floor(np.max(upper))) if upper.size else lower
    if top < lower:
        return np.zeros(upper.shape)
    lattice = np.arange(lower, top + 1, dtype=float)
    cumulative = np.cumsum(pmf(lattice))
    index = np.floor(upper).astype(int) - lower
    return np.where(index >= 0, cumulative[np.clip(index, 0, lattice.size - 1)], 0.0)


def forward_transition_cdf(ctx, s, x, t, y):
    """P(Y_t <= y | Y_s = x); ``x`` and ``y`` broadcast against each other."""
    s, t = float(s), float(t)
    _check_times(s, t)
    p, r = ctx.law.p, ctx.law.r
    kind = ctx.family.kind
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if kind is FamilyKind.WIENER:
        mean, var = _forward_moments(ctx, s, x, t)
        return _scalar_or_array(stats.norm.cdf(y, loc=mean, scale=np.sqrt(var)))
    if kind is FamilyKind.POISSON:
        return _scalar_or_array(stats.nbinom.cdf(y - x, p + x, (r + s) / (r + t)))
    if kind is FamilyKind.GAMMA:
        return _scalar_or_array(stats.betaprime.cdf((y - x) / (p + x), t - s, r + s + 1.0))
    out = np.empty(x.shape)
    for index in np.ndindex(x.shape):
        xi, yi = float(x[index]), float(y[index])
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            out[index] = _discrete_cdf(
                lambda k, xi=xi: forward_transition_density(ctx, s, xi, t, xi + k), 0,
                np.array([yi - xi]),
            )[0]
        else:
            out[index] = quadrature.integrate(
                lambda z, xi=xi: forward_transition_density(ctx, s, xi, t, z),
                -math.inf, yi, rel_tol=1e-8, abs_tol=1e-12,
            ).value
    return _scalar_or_array(np.clip(out, 0.0, 1.0))


def reversed_transition_evaluation(ctx, t, y, s, x):
    """Bridge density of Y_s at x given Y_t = y, with an out-of-support flag."""
    s, t, y = float(s), float(t), float(y)
    if not 0.0 < s < t:
        raise ArgumentError(f"reversed transition needs 0 < s < t, got s={s}, t={t}")
    family = ctx.family
    log_marginal = float(nef_family.increment_log_density(family, 0.0, t, y))
    if not log_marginal > math.log(UNDERFLOW_DENSITY):
        logger.debug("Reversed kernel at y=%g (t=%g) is outside the support", y, t)
        return KernelEvaluation(0.0, out_of_support=True)
    x = np.asarray(x, dtype=float)
    log_joint = (nef_family.increment_log_density(family, 0.0, s, x)
                 + nef_family.increment_log_density(family, 0.0, t - s, y - x))
    return KernelEvaluation(_scalar_or_array(np.exp(log_joint - log_marginal)))


def reversed_transition_density(ctx, t, y, s, x):
    """g_s(x) g_{t-s}(y - x)/g_t(y); zero when g_t(y) underflows."""
    return reversed_transition_evaluation(ctx, t, y, s, x).value


def reversed_transition_cdf(ctx, t, y, s, x):
    """P(Y_s <= x | Y_t = y); ``x`` and ``y`` broadcast against each other."""
    s, t = float(s), float(t)
    if not 0.0 < s < t:
        raise ArgumentError(f"reversed transition needs 0 < s < t, got s={s}, t={t}")
    kind = ctx.family.kind
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if kind is FamilyKind.WIENER:
        return _scalar_or_array(stats.norm.cdf(x, loc=s * y / t, scale=math.sqrt(s * (t - s) / t)))
    if kind is FamilyKind.POISSON:
        return _scalar_or_array(stats.binom.cdf(x, y, s / t))
    if kind is FamilyKind.GAMMA:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(y > 0.0, x / y, 0.0)
        return _scalar_or_array(stats.beta.cdf(ratio, s, t - s))
    out = np.empty(x.shape)
    for index in np.ndindex(x.shape):
        xi, yi = float(x[index]), float(y[index])
        if kind is FamilyKind.NEGATIVE_BINOMIAL:
            out[index] = _discrete_cdf(
                lambda k, yi=yi: reversed_transition_density(ctx, t, yi, s, k), 0, np.array([xi]),
            )[0]
        else:
            out[index] = quadrature.integrate(
                lambda z, yi=yi: reversed_transition_density(ctx, t, yi, s, z),
                -math.inf, xi, rel_tol=1e-8, abs_tol=1e-12,
            ).value
    return _scalar_or_array(np.clip(out, 0.0, 1.0))


def _pool_cells(observed, expected):
    """Merge adjacent cells until each expected count is at least MIN_EXPECTED."""
    pooled_obs, pooled_exp = [], []
    acc_obs = acc_exp = 0.0
    for obs, exp in zip(observed, expected):
        acc_obs += obs
        acc_exp += exp
        if acc_exp >= MIN_EXPECTED:
            pooled_obs.append(acc_obs)
            pooled_exp.append(acc_exp)
            acc_obs = acc_exp = 0.0
    if acc_exp > 0.0 or acc_obs > 0.0:
        if pooled_exp:
            pooled_obs[-1] += acc_obs
            pooled_exp[-1] += acc_exp
        else:
            pooled_obs.append(acc_obs)
            pooled_exp.append(acc_exp)
    return np.array(pooled_obs), np.array(pooled_exp)


def _lattice_probabilities(pmf, start):
    """pmf on start, start+1, ... until the remaining mass is below ENUMERATION_TAIL."""
    probs = []
    total = 0.0
    k = start
    chunk = 64
    while total < 1.0 - ENUMERATION_TAIL and k - start < ENUMERATION_LIMIT:
        values = np.asarray(pmf(np.arange(k, k + chunk, dtype=float)), dtype=float)
        probs.extend(values.tolist())
        total += float(values.sum())
        k += chunk
        if values.sum() == 0.0 and total > 0.5:
            break
    return np.array(probs)


def _grouped_discrete_statistic(conditioning, target, pmf_for, lattice_start):
    """Chi-square over groups of equal conditioning value, with exact cell probabilities."""
    statistic = 0.0
    dof = 0
    cells = 0
    used = 0
    for value in np.unique(conditioning):
        members = target[conditioning == value]
        n_group = members.size
        if n_group < 2 * MIN_EXPECTED:
            continue
        start = lattice_start(value)
        probs = _lattice_probabilities(pmf_for(value), start)
        offsets = np.rint(members - start).astype(int)
        counts = np.bincount(offsets[offsets >= 0], minlength=probs.size).astype(float)
        if counts.size > probs.size:
            probs = np.concatenate([probs, np.zeros(counts.size - probs.size)])
        expected = n_group * probs
        # remaining tail mass goes into the last cell
        expected[-1] += n_group * max(0.0, 1.0 - probs.sum())
        observed, expected = _pool_cells(counts, expected)
        if observed.size < 2:
            continue
        expected *= n_group / expected.sum()
        statistic += float(np.sum((observed - expected) ** 2 / expected))
        dof += observed.size - 1
        cells += observed.size
        used += n_group
    return statistic, dof, cells, used


def _pit_statistic(u, bins):
    counts, _ = np.histogram(np.clip(u, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    result = stats.chisquare(counts)
    return float(result.statistic), bins - 1, bins, int(counts.sum())


def _report(statistic, dof, cells, n, level, what):
    if dof < 1:
        raise ArgumentError(f"{what}: too few populated cells for a chi-square test")
    p_value = float(stats.chi2.sf(statistic, dof))
    report = ChiSquareReport(statistic, int(dof), p_value, int(n), level, p_value >= level, cells)
    logger.info("%s: chi2=%.3f dof=%d p=%.4g (%s)", what, statistic, dof, p_value,
                "pass" if report.passed else "FAIL")
    return report


def _subsample(n, limit):
    return np.arange(n) if limit is None or n <= limit else np.linspace(0, n - 1, limit).astype(int)


def forward_goodness_of_fit(ctx, batch, s, t, bins=GOF_BINS, level=GOF_LEVEL,
                            max_quadrature_paths=QUADRATURE_GOF_PATHS):
    """Chi-square test of simulated (Y_s, Y_t) pairs against the forward kernel."""
    s, t = float(s), float(t)
    _check_times(s, t)
    x = batch.column(s)
    y = batch.column(t)
    if ctx.family.is_discrete:
        statistic, dof, cells, used = _grouped_discrete_statistic(
            x, y,
            lambda value: (lambda k: forward_transition_density(ctx, s, value, t, k)),
            lambda value: int(value),
        )
        return _report(statistic, dof, cells, used, level, f"forward kernel {s}->{t}")
    index = _subsample(x.size, max_quadrature_paths
                       if ctx.family.kind is FamilyKind.HYPERBOLIC_SECANT else None)
    u = forward_transition_cdf(ctx, s, x[index], t, y[index])
    statistic, dof, cells, used = _pit_statistic(np.atleast_1d(u), bins)
    return _report(statistic, dof, cells, used, level, f"forward kernel {s}->{t}")


def reversed_goodness_of_fit(ctx, batch, s, t, bins=GOF_BINS, level=GOF_LEVEL,
                             max_quadrature_paths=QUADRATURE_GOF_PATHS):
    """Chi-square test of simulated (Y_s, Y_t) pairs against the base-process bridge."""
    s, t = float(s), float(t)
    if not 0.0 < s < t:
        raise ArgumentError(f"reversed transition needs 0 < s < t, got s={s}, t={t}")
    x = batch.column(s)
    y = batch.column(t)
    if ctx.family.is_discrete:
        statistic, dof, cells, used = _grouped_discrete_statistic(
            y, x,
            lambda value: (lambda k: reversed_transition_density(ctx, t, value, s, k)),
            lambda value: 0,
        )
        return _report(statistic, dof, cells, used, level, f"reversed kernel {t}->{s}")
    index = _subsample(x.size, max_quadrature_paths
                       if ctx.family.kind is FamilyKind.HYPERBOLIC_SECANT else None)
    u = reversed_transition_cdf(ctx, t, y[index], s, x[index])
    statistic, dof, cells, used = _pit_statistic(np.atleast_1d(u), bins)
    return _report(statistic, dof, cells, used, level, f"reversed kernel {t}->{s}")
