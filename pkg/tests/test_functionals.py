import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from functional_gmm.functionals import (
    FunctionalFamily,
    identification,
    identification_level_derivative,
    normal_expectile,
    normal_functional,
    normal_quantile,
    sample_expectile,
    sample_quantile,
)

levels = st.floats(0.01, 0.99)
reals = st.floats(-50, 50, allow_nan=False)


def erf_series(x):
    """Maclaurin series of erf, accurate for |x| < 3."""
    total, term, n = 0.0, x, 0
    while abs(term) > 1e-18:
        total += term / (2 * n + 1)
        n += 1
        term *= -x * x / n
    return 2.0 / math.sqrt(math.pi) * total


def phi_oracle(x):
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


def quantile_by_bisection(tau):
    lo, hi = -6.0, 6.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if phi_oracle(mid) < tau else (lo, mid)
    return 0.5 * (lo + hi)


class TestIdentification:
    def test_quantile_value(self):
        assert identification("quantile", 1.0, 0.5, 0.5) == 0.5

    def test_expectile_value(self):
        assert identification("expectile", 0.0, 1.0, 0.3) == pytest.approx(-0.3)

    def test_quantile_uniform_grid_integral(self):
        # E[1{Y <= 0.3}] = 0.3 for Y ~ U(0, 1), midpoint rule
        y = (np.arange(1_000_000) + 0.5) / 1_000_000
        assert abs(np.mean(identification("quantile", 0.3, y, 0.3))) < 1e-6

    def test_vectorized(self):
        x = np.array([0.0, 1.0, 2.0])
        out = identification("expectile", x, 1.0, 0.25)
        assert_allclose(out, [-0.25, 0.0, 0.75])

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5, np.nan])
    def test_level_outside_unit_interval(self, tau):
        with pytest.raises(ValueError):
            identification("quantile", 0.0, 0.0, tau)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            identification("mode", 0.0, 0.0, 0.5)

    def test_family_parse(self):
        assert FunctionalFamily.parse("Quantile") is FunctionalFamily.QUANTILE
        assert FunctionalFamily.parse(FunctionalFamily.EXPECTILE) is FunctionalFamily.EXPECTILE

    @pytest.mark.parametrize("family,tau", [("quantile", 0.2), ("quantile", 0.7),
                                            ("expectile", 0.2), ("expectile", 0.9)])
    def test_zero_at_the_functional(self, family, tau):
        rng = np.random.default_rng(11)
        y = rng.standard_normal(400_000)
        v = identification(family, normal_functional(family, tau), y, tau)
        assert abs(v.mean()) < 3 * v.std() / math.sqrt(y.size)

    @pytest.mark.parametrize("family", ["quantile", "expectile"])
    def test_orientation(self, family):
        y = np.random.default_rng(5).standard_normal(5_000)
        tau = 0.35
        grid = np.linspace(-3, 3, 601)
        means = np.array([identification(family, x, y, tau).mean() for x in grid])
        assert np.all(np.diff(means) >= -1e-15)
        root = grid[np.argmax(means >= 0)]
        target = sample_quantile(y, tau) if family == "quantile" else sample_expectile(y, tau)
        assert abs(root - target) <= 0.01 + 1e-12


class TestLevelDerivative:
    def test_quantile(self):
        assert identification_level_derivative("quantile", 3.0, -1.0, 0.4) == -1.0

    def test_expectile_above(self):
        assert identification_level_derivative("expectile", 2.0, 0.0, 0.4) == -2.0

    def test_expectile_below_matches_difference_quotient(self):
        h = 1e-6
        fd = (identification("expectile", 0.0, 3.0, 0.5 + h)
              - identification("expectile", 0.0, 3.0, 0.5 - h)) / (2 * h)
        assert identification_level_derivative("expectile", 0.0, 3.0, 0.5) == -3.0
        assert fd == pytest.approx(-3.0, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(x=reals, y=reals, tau=st.floats(0.01, 0.99),
           family=st.sampled_from(["quantile", "expectile"]))
    def test_matches_finite_differences(self, x, y, tau, family):
        h = 1e-6
        fd = (identification(family, x, y, tau + h) - identification(family, x, y, tau - h)) / (2 * h)
        assert abs(identification_level_derivative(family, x, y, tau) - fd) < 1e-6 * max(1.0, abs(x - y))


class TestNormalQuantile:
    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_upper_tail_against_erf_bisection(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)
        assert normal_quantile(0.975) == pytest.approx(quantile_by_bisection(0.975), abs=1e-10)

    def test_symmetry(self):
        assert normal_quantile(0.25) == pytest.approx(-normal_quantile(0.75), abs=1e-15)

    @pytest.mark.parametrize("tau", [0.0, 1.0])
    def test_domain(self, tau):
        with pytest.raises(ValueError):
            normal_quantile(tau)


class TestNormalExpectile:
    def test_mean(self):
        assert normal_expectile(0.5) == pytest.approx(0.0, abs=1e-14)

    def test_asymmetric_level(self):
        assert -0.255 <= normal_expectile(1 / 2.85) <= -0.245

    def test_defining_equation_by_quadrature(self):
        from scipy import integrate, stats
        tau = 0.2
        e = normal_expectile(tau)
        below = integrate.quad(lambda y: (e - y) * stats.norm.pdf(y), -np.inf, e)[0]
        above = integrate.quad(lambda y: (y - e) * stats.norm.pdf(y), e, np.inf)[0]
        assert (1 - tau) * below == pytest.approx(tau * above, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(tau=levels)
    def test_symmetry(self, tau):
        assert abs(normal_expectile(tau) + normal_expectile(1 - tau)) < 1e-10

    def test_vectorized_and_monotone(self):
        tau = np.linspace(0.01, 0.99, 99)
        e = normal_expectile(tau)
        assert e.shape == tau.shape
        assert np.all(np.diff(e) > 0)

    def test_expectile_lies_between_mean_and_quantile(self):
        assert normal_quantile(0.1) < normal_expectile(0.1) < 0.0


class TestSampleFunctionals:
    def test_degenerate_sample(self):
        assert sample_expectile([1, 1, 1], 0.8) == 1.0

    def test_two_points_mean(self):
        assert sample_expectile([0, 1], 0.5) == pytest.approx(0.5)

    def test_two_points_asymmetric(self):
        # (1 - tau) x = tau (1 - x) gives x = tau
        assert sample_expectile([0, 1], 0.75) == pytest.approx(0.75)

    @settings(max_examples=50, deadline=None)
    @given(values=st.lists(st.floats(-100, 100), min_size=1, max_size=40), tau=levels)
    def test_sample_expectile_solves_its_equation(self, values, tau):
        y = np.asarray(values)
        e = sample_expectile(y, tau)
        lhs = (1 - tau) * np.sum(np.maximum(e - y, 0.0))
        rhs = tau * np.sum(np.maximum(y - e, 0.0))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, np.abs(y).sum())

    def test_quantile_examples(self):
        assert sample_quantile([1, 2, 3], 0.5) == 2
        assert sample_quantile([1, 2, 3, 4], 0.25) == 1

    def test_quantile_monte_carlo(self):
        y = np.random.default_rng(3).standard_normal(100_000)
        assert abs(sample_quantile(y, 0.7) - normal_quantile(0.7)) < 0.02

    @settings(max_examples=50, deadline=None)
    @given(values=st.lists(st.floats(-100, 100), min_size=1, max_size=40), tau=levels)
    def test_quantile_is_ecdf_inverse(self, values, tau):
        y = np.asarray(values)
        q = sample_quantile(y, tau)
        assert np.mean(y <= q) >= tau - 1e-9
        assert np.mean(y < q) < tau + 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            sample_expectile([], 0.5)
        with pytest.raises(ValueError):
            sample_quantile([], 0.5)
