import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from functional_gmm.specmodels import (
    PROBIT,
    Constant,
    LogisticLinear,
    Seasonal,
    StructuralBreak,
    get_link,
    identifiability_warnings,
    level,
    level_gradient,
    make_model,
)


def logistic(u):
    return 1.0 / (1.0 + math.exp(-u))


def finite_difference_gradient(model, s, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h
        out[i] = (level(model, s, theta + e) - level(model, s, theta - e)) / (2 * h)
    return out


MODELS = [Constant(), LogisticLinear(), StructuralBreak(10.0), Seasonal(),
          LogisticLinear(PROBIT), Seasonal("probit")]


def random_point(model, rng):
    theta = rng.uniform(-2, 2, model.p)
    if isinstance(model, Seasonal):
        theta[2] = rng.uniform(3, 40)
    s = rng.uniform(0, 30) if model.uses_time else rng.uniform(-3, 3)
    if isinstance(model, StructuralBreak):
        s = float(rng.integers(1, 20)) + 0.5  # keep away from the jump
    return s, theta


class TestLevel:
    def test_center(self):
        assert level(LogisticLinear(), 3.7, [0.0, 0.0]) == 0.5

    def test_zero_slope_is_constant(self):
        z = np.linspace(-5, 5, 11)
        assert_allclose(level(LogisticLinear(), z, [0.7, 0.0]), logistic(0.7))

    def test_structural_break(self):
        m = StructuralBreak(10)
        assert level(m, 5, [1.0, -1.0]) == pytest.approx(0.26894, abs=1e-5)
        assert level(m, 15, [1.0, -1.0]) == pytest.approx(0.73106, abs=1e-5)
        assert level(m, 10, [1.0, -1.0]) == pytest.approx(logistic(-1.0))

    def test_seasonal_closed_form(self):
        t, th = 7.0, [0.2, 0.5, 12.0]
        assert level(Seasonal(), t, th) == pytest.approx(logistic(0.2 + 0.5 * math.sin(2 * math.pi * 7 / 12)))

    @settings(max_examples=100, deadline=None)
    @given(z=st.floats(-1e6, 1e6), a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3))
    def test_level_in_open_unit_interval(self, z, a, b):
        m = level(LogisticLinear(), z, [a, b])
        assert 0.0 < m < 1.0

    @pytest.mark.parametrize("model", MODELS, ids=repr)
    def test_strictly_increasing_in_first_parameter(self, model):
        rng = np.random.default_rng(2)
        s, theta = random_point(model, rng)
        values = []
        for t1 in np.linspace(-3, 3, 13):
            th = theta.copy()
            th[0] = t1
            if isinstance(model, StructuralBreak):
                s = 15.0
            values.append(level(model, s, th))
        assert np.all(np.diff(values) > 0)

    def test_parameter_count(self):
        with pytest.raises(ValueError):
            level(LogisticLinear(), 0.0, [1.0])

    def test_seasonal_zero_period(self):
        with pytest.raises(ValueError):
            level(Seasonal(), 1.0, [0.0, 1.0, 0.0])


class TestGradient:
    def test_logistic_at_origin(self):
        assert_allclose(level_gradient(LogisticLinear(), 2.0, [0.0, 0.0]), [0.25, 0.5])

    def test_constant_at_origin(self):
        assert_allclose(level_gradient(Constant(), 0.0, [0.0]), [0.25])

    def test_seasonal_at_seven(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            theta = [rng.normal(), rng.normal(), rng.uniform(3, 30)]
            fd = finite_difference_gradient(Seasonal(), 7.0, theta)
            assert_allclose(level_gradient(Seasonal(), 7.0, theta), fd, atol=1e-6)

    @pytest.mark.parametrize("model", MODELS, ids=repr)
    def test_matches_finite_differences(self, model):
        rng = np.random.default_rng(17)
        for _ in range(100):
            s, theta = random_point(model, rng)
            g = level_gradient(model, s, theta)
            assert g.shape == (model.p,)
            assert_allclose(g, finite_difference_gradient(model, s, theta), atol=1e-5)

    def test_vectorized_shape(self):
        z = np.linspace(-1, 1, 5)
        assert level_gradient(LogisticLinear(), z, [0.1, 0.2]).shape == (5, 2)


class TestConstruction:
    def test_make_model(self):
        assert make_model("logistic_linear") == LogisticLinear()
        assert make_model("break", break_time=4) == StructuralBreak(4)
        assert make_model("seasonal", "probit") == Seasonal(PROBIT)

    def test_break_needs_time(self):
        with pytest.raises(ValueError):
            make_model("break")

    @pytest.mark.parametrize("kind", ["spline", ""])
    def test_unknown_kind(self, kind):
        with pytest.raises(ValueError):
            make_model(kind)

    def test_unknown_link(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            get_link("identity")

    def test_seasonal_bounds_and_lattice(self):
        m = Seasonal()
        assert m.bounds(120)[2] == (2.0, 120.0)
        lattice = m.start_lattice(120)
        assert lattice.shape[1] == 3
        assert np.all(lattice[:, 1] != 0.0)
        assert lattice[:, 2].min() == 2.0 and lattice[:, 2].max() == 120.0


class TestIdentifiability:
    def test_constant_state_flagged(self):
        assert identifiability_warnings(LogisticLinear(), np.ones(10))

    def test_varying_state_clean(self):
        assert identifiability_warnings(LogisticLinear(), np.arange(10.0)) == []

    def test_break_outside_sample(self):
        assert identifiability_warnings(StructuralBreak(50), np.arange(1.0, 11.0))
        assert identifiability_warnings(StructuralBreak(5), np.arange(1.0, 11.0)) == []
