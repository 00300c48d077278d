"""Unit tests for adaptive quadrature, inverse-CDF tables and |Gamma(t+ix)|^2."""

import math

import numpy as np
import pytest

from bimeixner import quadrature
from bimeixner.errors import ArgumentError, IntegrationError, TabulationError


class TestIntegrate:
    """Test the adaptive Gauss-Kronrod integrator."""

    @pytest.mark.unit
    def test_gaussian_over_real_line(self):
        """Test the Gaussian integral over (-inf, inf)."""
        result = quadrature.integrate(lambda x: np.exp(-0.5 * x * x), -math.inf, math.inf)

        assert result.converged
        assert result.value == pytest.approx(math.sqrt(2.0 * math.pi), rel=1e-10)

    @pytest.mark.unit
    def test_half_angle_cosine(self):
        """Test that cos^2(theta/2) integrates to pi over (-pi, pi)."""
        result = quadrature.integrate(lambda x: np.cos(0.5 * x) ** 2, -math.pi, math.pi)

        assert result.value == pytest.approx(math.pi, rel=1e-10)

    @pytest.mark.unit
    def test_half_line_integral(self):
        """Test x/sinh(pi x) over (0, inf), which equals 1/4."""
        result = quadrature.integrate(lambda x: x / np.sinh(math.pi * x), 0.0, math.inf)

        assert result.value == pytest.approx(0.25, rel=1e-10)

    @pytest.mark.unit
    def test_lower_infinite_endpoint(self):
        """Test exp(x) over (-inf, 0)."""
        result = quadrature.integrate(np.exp, -math.inf, 0.0)

        assert result.value == pytest.approx(1.0, rel=1e-10)

    @pytest.mark.unit
    @pytest.mark.parametrize("degree", [0, 3, 7, 13])
    def test_polynomials_are_exact(self, degree):
        """Test polynomial integrands up to the rule's degree."""
        result = quadrature.integrate(lambda x: x ** degree, 0.0, 2.0)

        assert result.value == pytest.approx(2.0 ** (degree + 1) / (degree + 1), rel=1e-12)
        assert result.subdivisions == 1

    @pytest.mark.unit
    def test_reversed_limits_flip_sign(self):
        """Test that swapping the limits negates the integral."""
        result = quadrature.integrate(lambda x: x * x, 1.0, 0.0)

        assert result.value == pytest.approx(-1.0 / 3.0, rel=1e-12)

    @pytest.mark.unit
    @pytest.mark.parametrize("rel_tol", [1e-15, 1e-3])
    def test_tolerance_out_of_range(self, rel_tol):
        """Test that tolerances outside [1e-14, 1e-4] are rejected."""
        with pytest.raises(ArgumentError):
            quadrature.integrate(np.exp, 0.0, 1.0, rel_tol=rel_tol)

    @pytest.mark.unit
    def test_divergent_integral_raises(self):
        """Test that a divergent integrand exhausts the budget."""
        with pytest.raises(IntegrationError):
            quadrature.integrate(lambda x: 1.0 / x, 0.0, 1.0, max_intervals=50)

    @pytest.mark.unit
    def test_failure_can_be_reported_instead(self):
        """Test the non-raising mode on a divergent integrand."""
        result = quadrature.integrate(lambda x: 1.0 / x, 0.0, 1.0, max_intervals=50,
                                      raise_on_failure=False)

        assert not result.converged
        assert result.subdivisions == 50


class TestLogIntegrate:
    """Test log-space integration."""

    @pytest.mark.unit
    def test_large_exponent(self):
        """Test an integrand whose values overflow outside log space."""
        log_value, result = quadrature.log_integrate(
            lambda x: 1000.0 - 0.5 * x * x, -math.inf, math.inf,
        )

        assert result.converged
        assert log_value == pytest.approx(1000.0 + 0.5 * math.log(2.0 * math.pi), rel=1e-12)

    @pytest.mark.unit
    def test_mode_found_by_probing(self):
        """Test a shifted peak without a supplied mode."""
        log_value, _ = quadrature.log_integrate(
            lambda x: -0.5 * (x - 5.0) ** 2, -math.inf, math.inf,
        )

        assert log_value == pytest.approx(0.5 * math.log(2.0 * math.pi), abs=1e-9)


class TestAbsGammaSq:
    """Test |Gamma(t + ix)|^2."""

    @pytest.mark.unit
    def test_gamma_one(self):
        """Test Gamma(1) = 1."""
        assert quadrature.abs_gamma_sq(1.0, 0.0) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.unit
    def test_reflection_identity(self):
        """Test |Gamma(1+i)|^2 = pi/sinh(pi)."""
        assert quadrature.abs_gamma_sq(1.0, 1.0) == pytest.approx(math.pi / math.sinh(math.pi),
                                                                  rel=1e-10)

    @pytest.mark.unit
    def test_half(self):
        """Test Gamma(1/2)^2 = pi."""
        assert quadrature.abs_gamma_sq(0.5, 0.0) == pytest.approx(math.pi, rel=1e-12)

    @pytest.mark.unit
    def test_reflection_identity_on_grid(self):
        """Test pi x/sinh(pi x) at t = 1 over |x| <= 50."""
        x = np.linspace(-50.0, 50.0, 401)
        x = x[x != 0.0]
        expected = math.pi * x / np.sinh(math.pi * x)

        np.testing.assert_allclose(quadrature.abs_gamma_sq(1.0, x), expected, rtol=1e-10)

    @pytest.mark.unit
    @pytest.mark.parametrize("t", [0.05, 0.3, 1.7, 12.0, 49.0])
    def test_recurrence(self, t):
        """Test |Gamma(t+1+ix)|^2 = (t^2+x^2)|Gamma(t+ix)|^2."""
        x = np.linspace(-50.0, 50.0, 101)
        left = quadrature.log_abs_gamma_sq(t + 1.0, x)
        right = np.log(t * t + x * x) + quadrature.log_abs_gamma_sq(t, x)

        np.testing.assert_allclose(np.exp(left - right), 1.0, rtol=1e-10)

    @pytest.mark.unit
    def test_real_axis_matches_gammaln(self):
        """Test agreement with the real log-gamma at x = 0."""
        from scipy.special import gammaln

        for t in (0.05, 0.5, 3.3, 40.0):
            assert quadrature.log_abs_gamma_sq(t, 0.0) == pytest.approx(2.0 * gammaln(t),
                                                                        abs=1e-10)

    @pytest.mark.unit
    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_non_positive_t(self, t):
        """Test that t <= 0 is rejected."""
        with pytest.raises(ArgumentError):
            quadrature.abs_gamma_sq(t, 1.0)


class TestTabulateInverseCdf:
    """Test inverse-CDF tabulation."""

    @pytest.mark.unit
    def test_uniform_is_identity(self):
        """Test the uniform density on (0, 1)."""
        inverse = quadrature.tabulate_inverse_cdf(np.ones_like, (0.0, 1.0))
        u = np.linspace(0.01, 0.99, 99)

        np.testing.assert_allclose(inverse(u), u, atol=1e-6)

    @pytest.mark.unit
    def test_symmetric_density_median(self):
        """Test that cos^2(theta/2)/pi has median 0."""
        inverse = quadrature.tabulate_inverse_cdf(
            lambda x: np.cos(0.5 * x) ** 2 / math.pi, (-math.pi, math.pi),
        )

        assert float(inverse(0.5)) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.unit
    def test_round_trip(self):
        """Test CDF(I(u)) = u on a thousand points."""
        inverse = quadrature.tabulate_inverse_cdf(
            lambda x: np.cos(0.5 * x) ** 2 / math.pi, (-math.pi, math.pi),
        )
        u = (np.arange(1000) + 0.5) / 1000.0

        np.testing.assert_allclose(inverse.cdf_at(inverse(u)), u, atol=1e-6)

    @pytest.mark.unit
    def test_secant_law_is_strictly_monotone(self):
        """Test strict monotonicity and range for the p = r = 1 secant randomization law."""
        density = lambda x: np.exp(x) * np.cos(0.5 * x) ** 2  # noqa: E731
        mass = quadrature.integrate(density, -math.pi, math.pi).value
        inverse = quadrature.tabulate_inverse_cdf(lambda x: density(x) / mass,
                                                  (-math.pi, math.pi))
        values = inverse((np.arange(1000) + 0.5) / 1000.0)

        assert np.all(np.diff(values) > 0.0)
        assert np.all((values > -math.pi) & (values < math.pi))

    @pytest.mark.unit
    def test_mass_check(self):
        """Test that a density carrying mass 2 is rejected."""
        with pytest.raises(TabulationError):
            quadrature.tabulate_inverse_cdf(lambda x: 2.0 * np.ones_like(x), (0.0, 1.0))

    @pytest.mark.unit
    def test_infinite_support_rejected(self):
        """Test that tabulation needs a finite support."""
        with pytest.raises(ArgumentError):
            quadrature.tabulate_inverse_cdf(np.exp, (-math.inf, 0.0))

    @pytest.mark.unit
    def test_samples_stay_inside_support(self, rng):
        """Test that draws never reach the support endpoints."""
        inverse = quadrature.tabulate_inverse_cdf(np.ones_like, (0.0, 1.0))
        draws = inverse.sample(rng, 10_000)

        assert np.all((draws > 0.0) & (draws < 1.0))
        assert float(inverse(0.0)) > 0.0
        assert float(inverse(1.0)) < 1.0
