"""Unit tests for quadratic-harness parameters and the statistical checks."""

import dataclasses
import math

import numpy as np
import pytest

from bimeixner import qh_verify, randomization
from bimeixner.errors import ArgumentError, SingularDesignError
from bimeixner.nef_family import FamilyKind, FamilySpec
from bimeixner.qh_verify import MomentCheckReport, QHParams

COVARIANCE_PAIRS = ((0.25, 0.75), (0.5, 2.0), (1.5, 3.0), (1.0, 4.0))
HARNESS_TRIPLES = ((0.25, 0.5, 0.75), (0.5, 1.0, 2.0), (0.75, 1.5, 3.0), (1.5, 2.0, 4.0))
QVAR_TRIPLES = ((0.25, 0.5, 0.75), (0.5, 1.0, 2.0), (1.5, 2.0, 4.0))
Z_BATCHES = (
    "wiener_z_batch",
    "poisson_z_batch",
    "gamma_z_batch",
    "negative_binomial_z_batch",
    pytest.param("secant_z_batch", marks=pytest.mark.slow),
)


class TestParameters:
    """Test alpha, beta, sigma, tau, gamma and F."""

    @pytest.mark.unit
    def test_poisson(self, poisson):
        """Test alpha = 1/sqrt(p) for p = 4, r = 1."""
        params = qh_verify.qh_params_from_theorem(poisson, 4.0, 1.0)

        assert params.alpha == pytest.approx(0.5)
        assert params.beta == params.alpha
        assert (params.sigma, params.tau, params.gamma) == (0.0, 0.0, 1.0)

    @pytest.mark.unit
    def test_gamma(self, gamma_family):
        """Test alpha = 2/3, sigma = 1/9, gamma = 11/9 for p = 3, r = 10."""
        params = qh_verify.qh_params_from_theorem(gamma_family, 3.0, 10.0)

        assert params.alpha == pytest.approx(2.0 / 3.0, rel=1e-14)
        assert params.sigma == pytest.approx(1.0 / 9.0, rel=1e-14)
        assert params.gamma == pytest.approx(11.0 / 9.0, rel=1e-14)

    @pytest.mark.unit
    def test_inadmissible(self, gamma_family):
        """Test that r <= a is rejected."""
        with pytest.raises(ArgumentError):
            qh_verify.qh_params_from_theorem(gamma_family, 3.0, 1.0)

    @pytest.mark.unit
    def test_per_family_forms_agree(self, all_families):
        """Test the general formula against the per-family closed forms."""
        rng = np.random.default_rng(77)
        for family in all_families:
            for _ in range(20):
                p = rng.uniform(0.1, 10.0)
                r = rng.uniform(1.1, 20.0)
                general = qh_verify.qh_params_from_theorem(family, p, r)
                closed = qh_verify.closed_form_params(family, p, r)
                for name in ("alpha", "beta", "sigma", "tau", "gamma"):
                    assert getattr(general, name) == pytest.approx(getattr(closed, name),
                                                                   rel=1e-12, abs=1e-15)

    @pytest.mark.unit
    def test_bi_meixner_conditions(self, all_families, safe_params):
        """Test gamma = 1 + 2 sqrt(sigma tau) and alpha sqrt(tau) = beta sqrt(sigma)."""
        for family in all_families:
            params = qh_verify.qh_params_from_theorem(family, *safe_params[family.kind])
            assert params.gamma == pytest.approx(1.0 + 2.0 * math.sqrt(params.sigma * params.tau),
                                                 rel=1e-14)
            assert params.alpha * math.sqrt(params.tau) == pytest.approx(
                params.beta * math.sqrt(params.sigma), rel=1e-14, abs=1e-300)

    @pytest.mark.unit
    def test_f_coefficient(self, gamma_family):
        """Test F for Wiener and gamma parameters."""
        wiener = QHParams(0.0, 0.0, 0.0, 0.0, 1.0)
        gamma_params = qh_verify.qh_params_from_theorem(gamma_family, 3.0, 10.0)

        assert qh_verify.f_coefficient(wiener, 1.0, 2.0, 3.0) == pytest.approx(0.5)
        assert qh_verify.f_coefficient(gamma_params, 0.5, 0.75, 1.0) == pytest.approx(0.1125,
                                                                                    rel=1e-12)

    @pytest.mark.unit
    def test_f_needs_ordered_times(self):
        """Test that unordered times are rejected."""
        with pytest.raises(ArgumentError):
            qh_verify.f_coefficient(QHParams(0.0, 0.0, 0.0, 0.0, 1.0), 1.0, 0.5, 2.0)

    @pytest.mark.unit
    def test_theory_vector(self):
        """Test F (1, alpha, beta, sigma, tau, gamma - 1)."""
        params = QHParams(0.5, 0.5, 0.1, 0.1, 1.2)

        np.testing.assert_allclose(params.theory_vector(2.0), [2.0, 1.0, 1.0, 0.2, 0.2, 0.4])


class TestReports:
    """Test report construction and the regression helper."""

    @pytest.mark.unit
    def test_compare(self):
        """Test z-score and pass flag."""
        report = MomentCheckReport.compare("x", 1.0, 0.0, 0.5, 10)

        assert report.z_score == pytest.approx(2.0)
        assert report.passed
        assert not MomentCheckReport.compare("x", 3.0, 0.0, 0.5, 10).passed

    @pytest.mark.unit
    def test_exact(self):
        """Test the deterministic leg uses the tolerance with threshold one."""
        assert MomentCheckReport.exact("x", 1.0 + 1e-9, 1.0, 1e-8).passed
        assert not MomentCheckReport.exact("x", 1.0 + 1e-7, 1.0, 1e-8).passed
        assert MomentCheckReport.exact("x", 1.0, 1.0, 0.0).z_score == 0.0

    @pytest.mark.unit
    def test_nan_estimate_fails(self):
        """Test that a NaN estimate never passes."""
        assert not MomentCheckReport.compare("x", math.nan, 0.0, 1.0, 1).passed

    @pytest.mark.unit
    def test_regression_recovers_coefficients(self, rng):
        """Test OLS on a known linear model."""
        x = rng.standard_normal(20_000)
        y = 2.0 + 3.0 * x + rng.standard_normal(20_000) * (1.0 + 0.5 * np.abs(x))
        design = np.column_stack([np.ones_like(x), x])
        report = qh_verify.fit_regression("linear", design, y, ("intercept", "x"), [2.0, 3.0])

        assert report.passed
        assert report.dropped == ()
        assert np.all(report.std_errors > 0.0)

    @pytest.mark.unit
    def test_duplicate_column_dropped(self, rng):
        """Test that a repeated feature is dropped with a finite fit."""
        x = rng.standard_normal(5000)
        design = np.column_stack([np.ones_like(x), x, x])
        report = qh_verify.fit_regression("dup", design, 1.0 + x, ("intercept", "x1", "x2"),
                                          [1.0, 1.0, 0.0])

        assert len(report.dropped) == 1
        assert report.dropped[0] in ("x1", "x2")
        assert np.isfinite(report.coefficients[0])

    @pytest.mark.unit
    def test_zero_intercept_column(self, rng):
        """Test that a vanishing intercept column raises."""
        x = rng.standard_normal(100)
        design = np.column_stack([np.zeros_like(x), x])

        with pytest.raises(SingularDesignError):
            qh_verify.fit_regression("bad", design, x, ("intercept", "x"), [0.0, 1.0])

    @pytest.mark.unit
    def test_too_few_rows(self):
        """Test that n <= k raises."""
        with pytest.raises(SingularDesignError):
            qh_verify.fit_regression("small", np.ones((2, 2)), np.ones(2), ("a", "b"), [0, 0])


class TestZChecks:
    """Test the harness checks on simulated stitched paths."""

    @pytest.mark.unit
    @pytest.mark.parametrize("batch_name", Z_BATCHES)
    def test_covariance(self, request, batch_name):
        """Test Cov(Z_s, Z_u) = min(s, u) in all four regimes."""
        reports = qh_verify.covariance_check(request.getfixturevalue(batch_name), COVARIANCE_PAIRS)

        assert len(reports) == 4
        assert all(report.passed for report in reports)

    @pytest.mark.unit
    def test_means(self, gamma_z_batch):
        """Test E[Z_t] = 0 on the whole grid."""
        reports = qh_verify.mean_check(gamma_z_batch)

        assert len(reports) == len(gamma_z_batch.grid)
        assert all(report.passed for report in reports)

    @pytest.mark.unit
    def test_continuity(self, wiener_z_batch, gamma_z_batch):
        """Test Var(Z_s - Z_1) = 1 - s approaching 1 from below."""
        for batch in (wiener_z_batch, gamma_z_batch):
            assert all(r.passed for r in qh_verify.continuity_check(batch, (0.5, 0.9, 0.99)))

    @pytest.mark.unit
    def test_continuity_needs_pre_side(self, wiener_z_batch):
        """Test that s >= 1 is rejected."""
        with pytest.raises(ArgumentError):
            qh_verify.continuity_check(wiener_z_batch, (1.5,))

    @pytest.mark.unit
    @pytest.mark.parametrize("batch_name", Z_BATCHES)
    @pytest.mark.parametrize("s,t,u", HARNESS_TRIPLES)
    def test_harness(self, request, batch_name, s, t, u):
        """Test the linear conditional mean in each regime."""
        report = qh_verify.harness_regression(request.getfixturevalue(batch_name), s, t, u)

        assert report.passed
        assert report.feature_names == ("intercept", "Z_s", "Z_u")

    @pytest.mark.unit
    @pytest.mark.parametrize("batch_name", Z_BATCHES)
    @pytest.mark.parametrize("s,t,u", QVAR_TRIPLES)
    def test_qvar(self, request, batch_name, s, t, u):
        """Test the quadratic conditional variance in each regime."""
        batch = request.getfixturevalue(batch_name)
        params = qh_verify.qh_params_from_theorem(batch.family, batch.p, batch.r)
        report = qh_verify.qvar_regression(batch, s, t, u, params)

        assert report.passed
        assert report.feature_names == qh_verify.QVAR_FEATURES

    @pytest.mark.unit
    def test_qvar_detects_wrong_parameters(self, gamma_z_batch):
        """Test that Wiener parameters are rejected on gamma-family paths."""
        wrong = QHParams(0.0, 0.0, 0.0, 0.0, 1.0)

        assert not qh_verify.qvar_regression(gamma_z_batch, 0.5, 1.0, 2.0, wrong).passed

    @pytest.mark.unit
    def test_unordered_triple(self, wiener_z_batch):
        """Test that s < t < u is required."""
        with pytest.raises(ArgumentError):
            qh_verify.harness_regression(wiener_z_batch, 0.5, 0.25, 0.75)

    @pytest.mark.unit
    def test_theta_posterior(self, gamma_z_batch):
        """Test the posterior mean and variance of kappa'(Theta) given both sides."""
        mean = qh_verify.theta_posterior_check(gamma_z_batch, 0.5, 2.0, 3.0, 10.0)
        variance = qh_verify.theta_posterior_variance_check(gamma_z_batch, 0.5, 2.0, 3.0, 10.0)

        assert mean.passed
        assert variance.passed

    @pytest.mark.unit
    def test_posterior_needs_both_sides(self, gamma_z_batch):
        """Test that s < 1 < u is required."""
        with pytest.raises(ArgumentError):
            qh_verify.theta_posterior_check(gamma_z_batch, 1.5, 2.0, 3.0, 10.0)

    @pytest.mark.unit
    @pytest.mark.parametrize("batch_name", Z_BATCHES)
    def test_conditional_independence(self, request, batch_name):
        """Test that Theta buckets shrink Corr(Z_s, Z_u) across t = 1 toward zero."""
        batch = request.getfixturevalue(batch_name)
        reference = np.corrcoef(batch.column(0.5), batch.column(2.0))[0, 1]
        reports = qh_verify.conditional_independence_check(batch, 0.5, 2.0)

        assert [report.passed for report in reports] == [True, True, True]
        assert reports[0].theory == 0.0
        assert reference > reports[1].estimate > reports[2].estimate
        assert "10 Theta buckets" in reports[1].name
        assert "40 Theta buckets" in reports[2].name

    @pytest.mark.unit
    def test_conditional_independence_arguments(self, gamma_z_batch):
        """Test that both sides of t = 1 and at least two buckets are required."""
        with pytest.raises(ArgumentError):
            qh_verify.conditional_independence_check(gamma_z_batch, 0.5, 0.75)
        with pytest.raises(ArgumentError):
            qh_verify.conditional_independence_check(gamma_z_batch, 0.5, 2.0, buckets=1)
        with pytest.raises(ArgumentError):
            qh_verify.conditional_independence_check(gamma_z_batch, 0.5, 2.0, buckets=1000)

    @pytest.mark.unit
    def test_buckets_unrelated_to_theta(self, gamma_z_batch):
        """Test that bucketing by shuffled Theta values leaves the correlation in place."""
        shuffled = np.random.default_rng(3).permutation(gamma_z_batch.n_paths)
        mixed = dataclasses.replace(gamma_z_batch, thetas=gamma_z_batch.thetas[shuffled])
        reports = qh_verify.conditional_independence_check(mixed, 0.5, 2.0)

        reference = np.corrcoef(gamma_z_batch.column(0.5), gamma_z_batch.column(2.0))[0, 1]

        assert reports[1].estimate == pytest.approx(reference, abs=0.02)


class TestYChecks:
    """Test checks on randomized Y paths."""

    @pytest.mark.unit
    def test_martingale(self, poisson_y_batch, wiener_y_batch):
        """Test E[Y_t - Y_s | Y_s] = (t-s)(Y_s+p)/(s+r)."""
        assert qh_verify.martingale_check(poisson_y_batch, 1.0, 2.0, 2.0, 1.0).passed
        assert qh_verify.martingale_check(wiener_y_batch, 0.5, 3.0, 0.5, 1.0).passed

    @pytest.mark.unit
    def test_kprime_posterior(self, poisson_y_batch):
        """Test E[kappa'(Theta) | Y_s] = (Y_s+p)/(s+r)."""
        assert qh_verify.kprime_posterior_check(poisson_y_batch, 2.0, 2.0, 1.0).passed

    @pytest.mark.unit
    def test_y_covariance(self, poisson_y_batch):
        """Test Cov(Y_s, Y_t) = v^2 s (t + r) with v^2 = 2."""
        reports = qh_verify.y_covariance_check(poisson_y_batch, ((0.5, 2.0), (3.0, 1.0)), 2.0, 1.0)

        assert all(report.passed for report in reports)
        assert reports[1].theory == pytest.approx(2.0 * 1.0 * 4.0)


class TestIdentities:
    """Test the moment identities behind the harness parameters."""

    @pytest.mark.unit
    def test_kprime_moments(self, gamma_family):
        """Test both legs of the kappa'(Theta) moment check."""
        law = randomization.RandomizationLaw.create(gamma_family, 3.0, 10.0)
        reports = qh_verify.kprime_moment_checks(law, 100_000, seed=1)

        assert len(reports) == 4
        assert all(report.passed for report in reports)

    @pytest.mark.unit
    @pytest.mark.parametrize("kind,q,p,r", [
        (FamilyKind.GAMMA, None, 3.0, 10.0),
        (FamilyKind.POISSON, None, 2.0, 1.0),
        (FamilyKind.WIENER, None, 0.5, 1.0),
        (FamilyKind.NEGATIVE_BINOMIAL, 0.5, 2.0, 10.0),
        (FamilyKind.HYPERBOLIC_SECANT, None, 1.0, 5.0),
    ])
    def test_amazing_identity(self, kind, q, p, r):
        """Test E[Var(Y_s | Theta)] = s r var(kappa'(Theta))."""
        reports = qh_verify.identity_amazing(FamilySpec(kind, q), p, r, 1.5, 100_000, seed=2)

        assert [report.passed for report in reports] == [True, True]

    @pytest.mark.unit
    def test_amazing_identity_heavy_tail(self, secant):
        """Test the quadrature leg where the Monte Carlo leg has no finite variance."""
        reports = qh_verify.identity_amazing(secant, 0.0, 1.0, 1.0, 1000, seed=3)

        assert reports[1].theory == pytest.approx(1.0)
        assert reports[1].passed

    @pytest.mark.unit
    def test_minivv_enumeration(self, poisson, negative_binomial):
        """Test the bridge variance identity exactly for discrete families."""
        for family in (poisson, negative_binomial):
            report = qh_verify.identity_minivv(family, 0.0, 1.0, 3.0)
            assert report.passed
            assert report.n == qh_verify.MINIVV_MAX_N + 1

    @pytest.mark.unit
    @pytest.mark.parametrize("kind,theta", [
        (FamilyKind.WIENER, 0.3),
        (FamilyKind.GAMMA, 0.3),
        (FamilyKind.HYPERBOLIC_SECANT, 0.3),
    ])
    def test_minivv_simulated(self, kind, theta):
        """Test the bridge variance identity bin by bin for the continuous families."""
        report = qh_verify.identity_minivv(FamilySpec(kind), theta, 1.0, 2.0, n_paths=50_000,
                                           seed=4)

        assert report.passed
        assert "bin" in report.name

    @pytest.mark.unit
    def test_minivv_needs_ordered_times(self, poisson):
        """Test that 0 < t < u is required."""
        with pytest.raises(ArgumentError):
            qh_verify.identity_minivv(poisson, 0.0, 2.0, 1.0)
