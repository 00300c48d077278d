"""Quadratic-harness parameters of the stitched process and the checks behind them.

Every estimator returns a report object carrying its estimate, the value
theory predicts and a standard error, so that a suite of checks can be
serialized and judged uniformly. Monte Carlo checks pass when the z-score is
within ``Z_THRESHOLD``; exact legs (quadrature, enumeration) use the
tolerance as standard error and a threshold of one.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import nef_family, process_sim, quadrature, randomization, transition_kernel
from .errors import ArgumentError, SingularDesignError

logger = logging.getLogger(__name__)

Z_THRESHOLD = 4.0
EXACT_TOLERANCE = 1e-8
ENUMERATION_TOLERANCE = 1e-10
RANK_TOLERANCE = 1e-10
MINIVV_BINS = 10
MINIVV_MAX_N = 50
CI_BUCKETS = 10
CI_REFINEMENT = 4
CI_MIN_BUCKET = 100

QVAR_FEATURES = ("intercept", "delta_tilde", "delta", "delta_tilde_sq", "delta_sq", "cross")


@dataclass(frozen=True)
class QHParams:
    alpha: float
    beta: float
    sigma: float
    tau: float
    gamma: float

    def theory_vector(self, f_value):
        """Coefficients of the conditional variance on the qvar features."""
        return f_value * np.array(
            [1.0, self.alpha, self.beta, self.sigma, self.tau, -(1.0 - self.gamma)]
        )


@dataclass(frozen=True)
class MomentCheckReport:
    name: str
    estimate: float
    theory: float
    std_error: float
    z_score: float
    n: int
    passed: bool
    threshold: float = Z_THRESHOLD

    @classmethod
    def compare(cls, name, estimate, theory, std_error, n, threshold=Z_THRESHOLD):
        estimate, theory, std_error = float(estimate), float(theory), float(std_error)
        gap = estimate - theory
        if std_error > 0.0:
            z_score = gap / std_error
        else:
            z_score = 0.0 if gap == 0.0 else math.copysign(math.inf, gap)
        passed = bool(math.isfinite(gap) and abs(gap) <= threshold * std_error)
        report = cls(name, estimate, theory, std_error, z_score, int(n), passed, threshold)
        logger.debug("%s: estimate %.6g theory %.6g z=%.2f", name, estimate, theory, z_score)
        return report

    @classmethod
    def exact(cls, name, estimate, theory, tolerance, n=0):
        """Deterministic leg: passes iff |estimate - theory| <= tolerance."""
        return cls.compare(name, estimate, theory, tolerance, n, threshold=1.0)


@dataclass(frozen=True)
class RegressionReport:
    name: str
    feature_names: tuple
    coefficients: np.ndarray
    theory_coefficients: np.ndarray
    covariance_of_estimates: np.ndarray
    z_scores: np.ndarray
    passed: bool
    n: int
    dropped: tuple = ()
    threshold: float = Z_THRESHOLD

    @property
    def std_errors(self):
        return np.sqrt(np.diag(self.covariance_of_estimates))


def mean_report(name, samples, theory, threshold=Z_THRESHOLD):
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    std_error = samples.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
    return MomentCheckReport.compare(name, samples.mean(), theory, std_error, n, threshold)


def _covariance_report(name, a, b, theory, threshold=Z_THRESHOLD):
    products = (a - a.mean()) * (b - b.mean())
    return mean_report(name, products, theory, threshold)


def variance_report(name, a, theory, threshold=Z_THRESHOLD):
    return _covariance_report(name, a, a, theory, threshold)


def fit_regression(name, design, response, feature_names, theory, threshold=Z_THRESHOLD):
    """OLS with HC0 sandwich covariance; numerically dependent columns are dropped.

    Columns are ranked by a pivoted QR decomposition; the first column is the
    intercept and must survive, otherwise SingularDesignError is raised.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    theory = np.asarray(theory, dtype=float)
    n, k = design.shape
    if n <= k:
        raise SingularDesignError(f"{name}: {n} observations for {k} features")
    scale = np.sqrt(np.mean(design * design, axis=0))
    scale[scale == 0.0] = 1.0
    _, upper, pivots = linalg.qr(design / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(upper))
    rank = int(np.sum(diag > RANK_TOLERANCE * diag[0])) if diag.size and diag[0] > 0.0 else 0
    kept = np.sort(pivots[:rank])
    if 0 not in kept:
        raise SingularDesignError(f"{name}: the intercept column is numerically dependent")
    dropped = tuple(feature_names[j] for j in range(k) if j not in kept)
    if dropped:
        logger.warning("%s: dropping numerically dependent features %s", name, ", ".join(dropped))

    x = design[:, kept]
    gram = x.T @ x
    try:
        bread = linalg.inv(gram)
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"{name}: singular normal equations") from exc
    coef = bread @ (x.T @ response)
    residual = response - x @ coef
    weighted = x * residual[:, None]
    covariance = bread @ (weighted.T @ weighted) @ bread
    std_errors = np.sqrt(np.diag(covariance))

    coefficients = np.full(k, np.nan)
    coefficients[kept] = coef
    full_cov = np.full((k, k), np.nan)
    full_cov[np.ix_(kept, kept)] = covariance
    z_scores = np.full(k, np.nan)
    z_scores[kept] = (coef - theory[kept]) / std_errors
    passed = bool(np.all(np.abs(z_scores[kept]) <= threshold))
    logger.info("%s: max |z| = %.2f over %d coefficients (%s)", name,
                float(np.max(np.abs(z_scores[kept]))), kept.size, "pass" if passed else "FAIL")
    return RegressionReport(name, tuple(feature_names), coefficients, theory, full_cov,
                            z_scores, passed, n, dropped, threshold)


def qh_params_from_theorem(family, p, r):
    """alpha = beta = V'(m)/sqrt(V(m)(r-a)), sigma = tau = a/(r-a), gamma = (r+a)/(r-a)."""
    p, r = float(p), float(r)
    coeffs = nef_family.variance_coeffs(family)
    if not r > coeffs.a:
        raise ArgumentError(f"quadratic harness parameters need r > a = {coeffs.a}, got r={r}")
    randomization.validate_params(family, p, r)
    m = p / r
    gap = r - coeffs.a
    alpha = coeffs.derivative(m) / math.sqrt(coeffs(m) * gap)
    sigma = coeffs.a / gap
    return QHParams(alpha, alpha, sigma, sigma, (r + coeffs.a) / gap)


def closed_form_params(family, p, r):
    """The per-family closed forms of the quadratic harness parameters."""
    p, r = float(p), float(r)
    randomization.validate_params(family, p, r)
    kind = family.kind
    if kind is nef_family.FamilyKind.WIENER:
        alpha, sigma = 0.0, 0.0
    elif kind is nef_family.FamilyKind.POISSON:
        alpha, sigma = 1.0 / math.sqrt(p), 0.0
    elif kind is nef_family.FamilyKind.GAMMA:
        alpha, sigma = 2.0 / math.sqrt(r - 1.0), 1.0 / (r - 1.0)
    elif kind is nef_family.FamilyKind.NEGATIVE_BINOMIAL:
        alpha = (r + 2.0 * p) / math.sqrt(p * (p + r) * (r - 1.0))
        sigma = 1.0 / (r - 1.0)
    else:
        alpha = 2.0 * p / math.sqrt((r * r + p * p) * (2.0 * r - 1.0))
        sigma = 1.0 / (2.0 * r - 1.0)
    return QHParams(alpha, alpha, sigma, sigma, 1.0 + 2.0 * sigma)


def f_coefficient(params, s, t, u):
    """F = (u-t)(t-s)/(u(1+s sigma) + tau - s gamma)."""
    if not 0.0 < s < t < u:
        raise ArgumentError(f"F needs 0 < s < t < u, got ({s}, {t}, {u})")
    denominator = u * (1.0 + s * params.sigma) + params.tau - s * params.gamma
    if not denominator > 0.0:
        raise ArgumentError(f"F denominator is not positive at ({s}, {t}, {u}): {denominator}")
    return (u - t) * (t - s) / denominator


def covariance_check(batch, pairs, threshold=Z_THRESHOLD):
    """Sample Cov(Z_s, Z_u) against min(s, u) for every pair."""
    randomization.warn_if_heavy_tailed(batch.family, batch.r, 4, "covariance check")
    reports = []
    for s, u in pairs:
        a, b = batch.column(s), batch.column(u)
        reports.append(_covariance_report(f"cov(Z_{s:g},Z_{u:g})", a, b, min(s, u), threshold))
    return reports


def mean_check(batch, times=None, threshold=Z_THRESHOLD):
    """E[Z_t] = 0 at each time."""
    times = batch.grid.times if times is None else times
    return [mean_report(f"mean(Z_{t:g})", batch.column(t), 0.0, threshold) for t in times]


def continuity_check(batch, s_values, threshold=Z_THRESHOLD):
    """Var(Z_s - Z_1) = 1 - s for s < 1."""
    reports = []
    anchor = batch.column(1.0)
    for s in s_values:
        if not 0.0 < s < 1.0:
            raise ArgumentError(f"continuity check needs 0 < s < 1, got {s}")
        reports.append(variance_report(f"var(Z_{s:g}-Z_1)", batch.column(s) - anchor, 1.0 - s,
                                        threshold))
    return reports


def harness_regression(batch, s, t, u, threshold=Z_THRESHOLD):
    """Regress Z_t on (1, Z_s, Z_u); the conditional mean is the linear interpolation."""
    if not s < t < u:
        raise ArgumentError(f"harness regression needs s < t < u, got ({s}, {t}, {u})")
    randomization.warn_if_heavy_tailed(batch.family, batch.r, 4, "harness regression")
    zs, zt, zu = batch.column(s), batch.column(t), batch.column(u)
    design = np.column_stack([np.ones_like(zs), zs, zu])
    theory = [0.0, (u - t) / (u - s), (t - s) / (u - s)]
    return fit_regression(f"harness({s:g},{t:g},{u:g})", design, zt,
                          ("intercept", "Z_s", "Z_u"), theory, threshold)


def qvar_regression(batch, s, t, u, params, threshold=Z_THRESHOLD):
    """Regress squared interpolation residuals on the quadratic-form features."""
    if not s < t < u:
        raise ArgumentError(f"qvar regression needs s < t < u, got ({s}, {t}, {u})")
    randomization.warn_if_heavy_tailed(batch.family, batch.r, 8, "qvar regression")
    zs, zt, zu = batch.column(s), batch.column(t), batch.column(u)
    residual = zt - ((u - t) * zs + (t - s) * zu) / (u - s)
    delta_tilde = (u * zs - s * zu) / (u - s)
    delta = (zu - zs) / (u - s)
    design = np.column_stack([
        np.ones_like(zs), delta_tilde, delta, delta_tilde ** 2, delta ** 2, delta_tilde * delta,
    ])
    theory = params.theory_vector(f_coefficient(params, s, t, u))
    return fit_regression(f"qvar({s:g},{t:g},{u:g})", design, residual ** 2, QVAR_FEATURES,
                          theory, threshold)


def martingale_check(batch_y, s, t, p, r, threshold=Z_THRESHOLD):
    """Regress Y_t - Y_s on (1, Y_s): E[Y_t - Y_s | Y_s] = (t-s)(Y_s+p)/(s+r)."""
    if not s < t:
        raise ArgumentError(f"martingale check needs s < t, got ({s}, {t})")
    ys, yt = batch_y.column(s), batch_y.column(t)
    design = np.column_stack([np.ones_like(ys), ys])
    theory = [(t - s) * p / (s + r), (t - s) / (s + r)]
    return fit_regression(f"martingale({s:g},{t:g})", design, yt - ys, ("intercept", "Y_s"),
                          theory, threshold)


def kprime_posterior_check(batch_y, s, p, r, threshold=Z_THRESHOLD):
    """Regress kappa'(Theta) on (1, Y_s): E[kappa'(Theta) | Y_s] = (Y_s+p)/(s+r)."""
    ys = batch_y.column(s)
    design = np.column_stack([np.ones_like(ys), ys])
    theory = [p / (s + r), 1.0 / (s + r)]
    return fit_regression(f"kprime|Y_{s:g}", design, batch_y.kprime(), ("intercept", "Y_s"),
                          theory, threshold)


def _ingredients(batch_z, s, u):
    if not s < 1.0 < u:
        raise ArgumentError(f"posterior checks need s < 1 < u, got ({s}, {u})")
    s_mapped, y_pre = batch_z.pre_ingredient(s)
    u_mapped, y_post = batch_z.post_ingredient(u)
    return s_mapped, y_pre, u_mapped, y_post, batch_z.ingredients.kprime


def theta_posterior_check(batch_z, s, u, p, r, threshold=Z_THRESHOLD):
    """Regress kappa'(Theta) on (1, Y_{s'}, Y'_{u'}); slopes 1/(s'+u'+r)."""
    s_mapped, y_pre, u_mapped, y_post, kprime = _ingredients(batch_z, s, u)
    total = s_mapped + u_mapped + r
    design = np.column_stack([np.ones_like(y_pre), y_pre, y_post])
    theory = [p / total, 1.0 / total, 1.0 / total]
    return fit_regression(f"kprime|Y_{s_mapped:g},Y'_{u_mapped:g}", design, kprime,
                          ("intercept", "Y_pre", "Y_post"), theory, threshold)


def theta_posterior_variance_check(batch_z, s, u, p, r, threshold=Z_THRESHOLD):
    """E[(kappa' - mu)^2 - V(mu)/(r+s'+u'-a)] = 0 with mu the posterior mean."""
    s_mapped, y_pre, u_mapped, y_post, kprime = _ingredients(batch_z, s, u)
    coeffs = nef_family.variance_coeffs(batch_z.family)
    total = r + s_mapped + u_mapped
    mu = (y_pre + y_post + p) / total
    gap = (kprime - mu) ** 2 - coeffs(mu) / (total - coeffs.a)
    return mean_report(f"posterior var kprime|Y_{s_mapped:g},Y'_{u_mapped:g}", gap, 0.0, threshold)


def _bucket_correlation(thetas, a, b, buckets):
    """Size-weighted mean of Corr(a, b) inside equal-count Theta buckets, and its standard error."""
    order = np.argsort(thetas, kind="stable")
    correlations, sizes = [], []
    for chunk in np.array_split(order, buckets):
        correlations.append(np.corrcoef(a[chunk], b[chunk])[0, 1])
        sizes.append(chunk.size)
    correlations, sizes = np.array(correlations), np.array(sizes, dtype=float)
    weights = sizes / sizes.sum()
    mixed = float(np.dot(weights, correlations))
    spread = (1.0 - correlations ** 2) ** 2 / (sizes - 1.0)
    std_error = math.sqrt(float(np.sum(weights ** 2 * spread)))
    return mixed, std_error


def conditional_independence_check(batch_z, s, u, buckets=CI_BUCKETS, threshold=Z_THRESHOLD):
    """Z_s and Z_u are independent given Theta when s < 1 < u.

    The first report is exact in expectation: Cov(Y_{s'} - s' kappa', Y'_{u'} - u' kappa') = 0.
    The other two bucket the paths by Theta and require the mixed
    within-bucket correlation to fall below the unconditioned one, and to
    fall again when the buckets are ``CI_REFINEMENT`` times narrower.
    """
    if buckets < 2:
        raise ArgumentError(f"need at least two Theta buckets, got {buckets}")
    s_mapped, y_pre, u_mapped, y_post, kprime = _ingredients(batch_z, s, u)
    min_size = batch_z.n_paths // (buckets * CI_REFINEMENT)
    if min_size < CI_MIN_BUCKET:
        raise ArgumentError(f"{batch_z.n_paths} paths are too few for {buckets} Theta buckets")
    reports = [mean_report(
        f"cov(Y_{s_mapped:g},Y'_{u_mapped:g}|Theta)",
        (y_pre - s_mapped * kprime) * (y_post - u_mapped * kprime), 0.0, threshold,
    )]

    zs, zu = batch_z.column(s), batch_z.column(u)
    reference = float(np.corrcoef(zs, zu)[0, 1])
    for count in (buckets, buckets * CI_REFINEMENT):
        mixed, std_error = _bucket_correlation(batch_z.thetas, zs, zu, count)
        z_score = mixed / std_error if std_error > 0.0 else math.inf
        passed = bool(math.isfinite(mixed) and mixed < reference)
        reports.append(MomentCheckReport(
            f"corr(Z_{s:g},Z_{u:g}|{count} Theta buckets)", mixed, 0.0, std_error, z_score,
            batch_z.n_paths, passed, threshold,
        ))
        logger.info("corr(Z_%g,Z_%g): %.4f unconditioned, %.4f over %d Theta buckets",
                    s, u, reference, mixed, count)
        reference = mixed
    return reports


def y_covariance_check(batch_y, pairs, v2, r, threshold=Z_THRESHOLD):
    """Cov(Y_s, Y_t) = v^2 s (t + r) for s <= t."""
    reports = []
    for s, t in pairs:
        s, t = min(s, t), max(s, t)
        reports.append(_covariance_report(f"cov(Y_{s:g},Y_{t:g})", batch_y.column(s),
                                          batch_y.column(t), v2 * s * (t + r), threshold))
    return reports


def _sample_thetas(law, n_paths, seed, threads=0):
    blocks = process_sim.run_blocks(
        n_paths, seed, lambda rng, size: randomization.sample_theta(law, rng, size), threads,
    )
    return np.concatenate(blocks)


def kprime_moment_checks(law, n_paths, seed, threshold=Z_THRESHOLD, threads=0):
    """Monte Carlo and quadrature legs for the mean and variance of kappa'(Theta)."""
    closed = randomization.kprime_moments(law)
    thetas = _sample_thetas(law, n_paths, seed, threads)
    kprime = nef_family.kappa_prime(law.family, thetas)
    by_quadrature = randomization.kprime_moments_by_quadrature(law)
    scale = max(1.0, abs(closed.mean))
    return [
        mean_report("E[kprime]", kprime, closed.mean, threshold),
        variance_report("var(kprime)", kprime, closed.variance, threshold),
        MomentCheckReport.exact("E[kprime] quadrature", by_quadrature.mean, closed.mean,
                                EXACT_TOLERANCE * scale),
        MomentCheckReport.exact("var(kprime) quadrature", by_quadrature.variance, closed.variance,
                                EXACT_TOLERANCE * max(1.0, closed.variance)),
    ]


def identity_amazing(family, p, r, s, n_paths, seed, threshold=Z_THRESHOLD, threads=0):
    """E[Var(Y_s | Theta)] = s r var(kappa'(Theta)), by simulation and by quadrature."""
    if not s > 0.0:
        raise ArgumentError(f"identity needs s > 0, got {s}")
    law = randomization.RandomizationLaw.create(family, p, r)
    v2 = randomization.kprime_moments(law).variance
    batch = process_sim.simulate_y(family, p, r, process_sim.TimeGrid((s,)), n_paths, seed, threads)
    spread = (batch.column(s) - s * batch.kprime()) ** 2
    lo, hi = nef_family.theta_domain(family)
    mode = nef_family.mean_to_theta(family, law.mean)

    def curvature(theta):
        density = np.exp(randomization.theta_log_density(law, theta))
        with np.errstate(all="ignore"):
            value = nef_family.kappa_double_prime(family, theta) * density
        return np.where(density > 0.0, value, 0.0)

    integral = quadrature.integrate(
        curvature, lo, hi, rel_tol=1e-11, abs_tol=1e-14, points=(mode,),
    ).value
    theory = r * v2
    return [
        mean_report(f"E[var(Y_{s:g}|Theta)]", spread, s * theory, threshold),
        MomentCheckReport.exact("E[kappa''(Theta)] quadrature", integral, theory,
                                EXACT_TOLERANCE * max(1.0, theory)),
    ]


def _minivv_enumeration(family, t, u, max_n):
    """Largest gap between the enumerated Var(xi_t | xi_u = n) and the formula, n <= max_n."""
    ctx = transition_kernel.KernelContext(
        randomization.RandomizationLaw.create(family, 1.0, 2.0),
    )
    coeffs = nef_family.variance_coeffs(family)
    worst = (0.0, 0.0, 0.0)
    for n in range(max_n + 1):
        k = np.arange(n + 1, dtype=float)
        probs = transition_kernel.reversed_transition_density(ctx, u, float(n), t, k)
        probs = np.atleast_1d(probs)
        mean = float(np.dot(k, probs))
        variance = float(np.dot((k - mean) ** 2, probs))
        formula = t * (u - t) / (u + coeffs.a) * coeffs(n / u)
        if abs(variance - formula) >= abs(worst[0] - worst[1]):
            worst = (variance, formula, n)
    return worst


def identity_minivv(family, theta, t, u, n_paths=200_000, seed=0, bins=MINIVV_BINS,
                    max_n=MINIVV_MAX_N, threshold=Z_THRESHOLD):
    """Var(xi_t | xi_u) = t(u-t)/(u+a) V(xi_u/u).

    Discrete families are enumerated exactly for xi_u = 0..max_n. Continuous
    families are simulated under the tilt ``theta`` and checked bin by bin
    (equal-count bins of xi_u); the worst bin is reported.
    """
    if not 0.0 < t < u:
        raise ArgumentError(f"identity needs 0 < t < u, got ({t}, {u})")
    if family.is_discrete:
        variance, formula, n = _minivv_enumeration(family, t, u, max_n)
        return MomentCheckReport.exact(f"var(xi_{t:g}|xi_{u:g}={n}) enumeration", variance,
                                       formula, ENUMERATION_TOLERANCE * max(1.0, abs(formula)),
                                       n=max_n + 1)
    coeffs = nef_family.variance_coeffs(family)

    def simulate_block(rng, size):
        thetas = np.full(size, float(theta))
        first = nef_family.increment_samples(family, thetas, t, rng)
        return first, first + nef_family.increment_samples(family, thetas, u - t, rng)

    blocks = process_sim.run_blocks(n_paths, seed, simulate_block)
    xi_t = np.concatenate([block[0] for block in blocks])
    xi_u = np.concatenate([block[1] for block in blocks])
    gap = (xi_t - t * xi_u / u) ** 2 - t * (u - t) / (u + coeffs.a) * coeffs(xi_u / u)
    edges = np.quantile(xi_u, np.linspace(0.0, 1.0, bins + 1))
    labels = np.clip(np.searchsorted(edges, xi_u, side="right") - 1, 0, bins - 1)
    reports = [
        mean_report(f"var(xi_{t:g}|xi_{u:g} in bin {b})", gap[labels == b], 0.0, threshold)
        for b in range(bins)
    ]
    return max(reports, key=lambda report: abs(report.z_score))
