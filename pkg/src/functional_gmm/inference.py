"""J-test, Wald tests, chi-square tail probabilities and level confidence bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import SingularCovarianceError
from .functionals import normal_quantile
from .gmm import GmmFit, _sym_inverse
from .specmodels import LINKS, LogisticLinear, SpecificationModel, StructuralBreak

_EPS = 1e-16
_TINY = 1e-300


def _gamma_q_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return 1.0 - total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_continued_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_survival(x: float, df: int) -> float:
    """``P(chi2_df > x)``: the regularized upper incomplete gamma ``Q(df/2, x/2)``.

    Series expansion below ``x/2 < df/2 + 1``, continued fraction above.
    """
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df}")
    x = float(x)
    if not x >= 0.0:
        raise ValueError(f"chi-square statistic must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    a, half = 0.5 * df, 0.5 * x
    if half == 0.0:  # subnormal x
        return 1.0
    if half < a + 1.0:
        q = _gamma_q_series(a, half)
    else:
        q = _gamma_q_continued_fraction(a, half)
    return min(max(q, 0.0), 1.0)


@dataclass
class TestResult:
    kind: str
    statistic: float
    df: int
    p_value: float
    T_eff: int
    warnings: list[str] = field(default_factory=list)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {"kind": self.kind, "statistic": self.statistic, "df": self.df,
                "p_value": self.p_value, "T_eff": self.T_eff, "warnings": list(self.warnings)}


def _small_sample_warnings(fit: GmmFit) -> list[str]:
    if fit.T_eff < 30 * fit.p:
        return [f"T_eff = {fit.T_eff} < 30 x p: chi-square approximation may be poor"]
    return []


def j_test(fit: GmmFit) -> TestResult:
    """Test of overidentifying restrictions ``T g' S^-1 g`` at the estimate."""
    df = fit.q - fit.p
    if df <= 0:
        raise ValueError("exactly identified: J-test undefined (df = 0)")
    stat = float(fit.T_eff * fit.gbar @ _sym_inverse(fit.S) @ fit.gbar)
    stat = max(stat, 0.0)
    return TestResult("J", stat, df, chi2_survival(stat, df), fit.T_eff,
                      _small_sample_warnings(fit))


@dataclass(frozen=True)
class Restriction:
    """Differentiable restriction ``R(theta) = 0`` with its Jacobian."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]

    def value(self, theta) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.func(np.asarray(theta, dtype=float)), dtype=float))

    def jacobian(self, theta) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.jac(np.asarray(theta, dtype=float)), dtype=float))

    @classmethod
    def linear(cls, name: str, A, b=None) -> "Restriction":
        """``R(theta) = A theta - b``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        return cls(name, lambda th: A @ th - b, lambda th: A)


def builtin_restriction(name: str, model: SpecificationModel) -> Restriction:
    """``zero_slope`` (level independent of the state) or ``no_break``."""
    if name == "zero_slope":
        if not isinstance(model, LogisticLinear):
            raise ValueError("zero_slope applies to the logistic_linear model")
        return Restriction.linear("zero_slope", [[0.0, 1.0]])
    if name == "no_break":
        if not isinstance(model, StructuralBreak):
            raise ValueError("no_break applies to the break model")
        return Restriction.linear("no_break", [[1.0, -1.0]])
    raise ValueError(f"unknown restriction {name!r}; built-ins are zero_slope and no_break")


def wald_test(fit: GmmFit, restriction: Restriction) -> TestResult:
    """Wald statistic ``R' (R_theta Cov R_theta')^-1 R`` with ``Cov = Sigma / T``."""
    r = restriction.value(fit.theta)
    J = restriction.jacobian(fit.theta)
    l = r.size
    if J.shape != (l, fit.p):
        raise ValueError(f"restriction Jacobian must be {l} x {fit.p}, got {J.shape}")
    if l > fit.p:
        raise ValueError(f"{l} restrictions exceed the {fit.p} parameters")
    middle = J @ fit.cov @ J.T
    middle = 0.5 * (middle + middle.T)
    if np.linalg.cond(middle) > 1e12:
        raise SingularCovarianceError(
            f"restriction covariance for {restriction.name!r} is singular",
            diagnostics={"middle": middle.tolist()},
        )
    stat = max(float(r @ np.linalg.solve(middle, r)), 0.0)
    return TestResult("Wald", stat, l, chi2_survival(stat, l), fit.T_eff,
                      _small_sample_warnings(fit))


@dataclass(frozen=True)
class LevelBand:
    z_grid: np.ndarray
    level_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    confidence: float


def level_band(model: SpecificationModel, theta, cov, z_grid, confidence: float) -> LevelBand:
    """Pointwise normal interval for the predictor mapped through the link.

    The predictor variance is ``c(z)' cov c(z)`` with ``c`` its gradient in
    theta; monotonicity of the link carries the coverage over unchanged.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if model.link.name not in LINKS:
        raise ValueError("level bands need a strictly increasing link")
    theta = model.check_theta(theta)
    cov = np.asarray(cov, dtype=float)
    z = np.atleast_1d(np.asarray(z_grid, dtype=float))
    eta = model.predictor(z, theta)
    c = model.predictor_gradient(z, theta)
    se = np.sqrt(np.maximum(np.einsum("ni,ij,nj->n", c, cov, c), 0.0))
    half = normal_quantile(0.5 + 0.5 * confidence) * se
    lo = np.clip(model.link.fn(eta - half), 1e-8, 1 - 1e-8)
    hi = np.clip(model.link.fn(eta + half), 1e-8, 1 - 1e-8)
    mid = np.atleast_1d(model.level(z, theta))
    return LevelBand(z, mid, np.minimum(lo, mid), np.maximum(hi, mid), confidence)


def level_confidence_band(fit: GmmFit, z_grid, confidence: float,
                          model: SpecificationModel | None = None) -> LevelBand:
    """Confidence band for ``m(z, theta_hat)`` from a fitted model."""
    return level_band(model or fit.model, fit.theta, fit.cov, z_grid, confidence)
