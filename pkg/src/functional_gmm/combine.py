"""Predictive densities from point forecasts with estimated functionals, and scores."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ForecastDataset
from .functionals import FunctionalFamily, normal_cdf, normal_functional, normal_pdf
from .specmodels import SpecificationModel

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class DensityForecast:
    mu: float
    sigma: float
    t: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError("density parameters must be finite")
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")


def gaussian_closed_form(x: float, level: float, sigma: float, family="quantile",
                         t: float | None = None) -> DensityForecast:
    """Gaussian whose ``level``-quantile (or -expectile) equals the forecast ``x``.

    ``mu = x - a_level * sigma`` with ``a_level`` the standard-normal functional.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    return DensityForecast(float(x - normal_functional(family, level) * sigma), float(sigma), t)


def identity_weight(p: float) -> float:
    return p


@dataclass
class CombinationProblem:
    """Point forecasts ``x_i`` with estimated levels and J-test p-values.

    The combined density minimizes ``sum_i w(p_i) d(functional_i(P) - x_i)``
    with ``d`` absolute or squared distance.
    """

    forecasts: Sequence[float]
    levels: Sequence[float]
    p_values: Sequence[float]
    families: Sequence[str] | str = "quantile"
    weight_fn: Callable[[float], float] = identity_weight
    distance: str = "squared"
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.forecasts = np.atleast_1d(np.asarray(self.forecasts, dtype=float))
        self.levels = np.atleast_1d(np.asarray(self.levels, dtype=float))
        self.p_values = np.atleast_1d(np.asarray(self.p_values, dtype=float))
        n = self.forecasts.size
        if n == 0:
            raise ValueError("a combination needs at least one forecast")
        if self.levels.size != n or self.p_values.size != n:
            raise ValueError("forecasts, levels and p_values must have equal length")
        if isinstance(self.families, str):
            self.families = [self.families] * n
        self.families = [FunctionalFamily.parse(f) for f in self.families]
        if len(self.families) != n:
            raise ValueError("one family per forecast is required")
        if np.any((self.p_values < 0.0) | (self.p_values > 1.0)):
            raise ValueError("p-values must lie in [0, 1]")
        if self.distance not in ("absolute", "squared"):
            raise ValueError("distance must be 'absolute' or 'squared'")
        self.weights = np.array([self.weight_fn(float(p)) for p in self.p_values], dtype=float)
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0.0):
            raise ValueError("weights must be finite and non-negative")


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    keep = w > 0
    v, w = v[keep], w[keep]
    cum = np.cumsum(w)
    half = 0.5 * cum[-1]
    k = int(np.searchsorted(cum, half))
    if math.isclose(cum[k], half, rel_tol=1e-12) and k + 1 < v.size:
        # every point between the two middle values minimizes the loss
        return 0.5 * (v[k] + v[k + 1])
    return float(v[k])


def solve_combination(prob: CombinationProblem, sigma: float, t: float | None = None) -> DensityForecast:
    """Gaussian combination with externally supplied ``sigma``.

    With ``mu`` as the only free parameter each forecast implies the location
    ``x_i - a_i sigma``; the squared distance gives their weighted mean and
    the absolute distance their weighted median.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    if prob.weights.sum() <= 0.0:
        raise ValueError("all combination weights are zero")
    shifts = np.array([normal_functional(f, m) for f, m in zip(prob.families, prob.levels)])
    implied = prob.forecasts - shifts * sigma
    if prob.distance == "squared":
        mu = float(np.dot(prob.weights, implied) / prob.weights.sum())
    else:
        mu = _weighted_median(implied, prob.weights)
    return DensityForecast(mu, float(sigma), t)


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of ``N(mu, sigma^2)`` at the observation ``y``."""
    mu, sigma, y = (np.asarray(a, dtype=float) for a in (mu, sigma, y))
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    u = (y - mu) / sigma
    out = sigma * (u * (2.0 * normal_cdf(u) - 1.0) + 2.0 * normal_pdf(u) - _INV_SQRT_PI)
    return out.item() if out.ndim == 0 else out


def lin_lin_loss(x, y, levels) -> np.ndarray:
    """Piecewise-linear loss ``(1{x >= y} - m)(x - y)``, consistent for the ``m``-quantile."""
    e = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return ((e >= 0.0).astype(float) - np.asarray(levels, dtype=float)) * e


def score_forecasts(x, y, levels) -> dict:
    """Mean squared error and mean state-dependent lin-lin loss."""
    x, y, levels = (np.asarray(a, dtype=float).ravel() for a in (x, y, levels))
    if not (x.size == y.size == levels.size):
        raise ValueError("x, y and levels must have equal length")
    if np.any((levels <= 0.0) | (levels >= 1.0)):
        raise ValueError("levels must lie strictly inside (0, 1)")
    return {"MSE": float(np.mean(np.square(x - y))),
            "MFLL": float(np.mean(lin_lin_loss(x, y, levels)))}


def normalize_scores(scores: dict[str, dict]) -> dict[str, dict]:
    """Divide each metric by its largest value across forecasts."""
    metrics = next(iter(scores.values())).keys()
    top = {k: max(s[k] for s in scores.values()) for k in metrics}
    return {name: {k: (s[k] / top[k] if top[k] > 0 else 0.0) for k in metrics}
            for name, s in scores.items()}


def sigma_from_differences(y, floor_fraction: float = 1e-6) -> np.ndarray:
    """``sigma_t = |y_{t-1} - y_{t-2}|``, floored at ``floor_fraction * std(y)``.

    The first two entries are NaN.
    """
    y = np.asarray(y, dtype=float)
    sigma = np.full(y.size, np.nan)
    sigma[2:] = np.abs(y[1:-1] - y[:-2])
    floor = floor_fraction * float(np.std(y))
    if floor <= 0.0:
        floor = floor_fraction
    return np.where(np.isnan(sigma), np.nan, np.maximum(sigma, floor))


@dataclass(frozen=True)
class CombinedSeries:
    t: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    levels: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "mu", "sigma"])
            for t, mu, s in zip(self.t, self.mu, self.sigma):
                writer.writerow([int(t), "%.17g" % mu, "%.17g" % s])

    def scores(self) -> dict:
        raw = {"combined_mean": score_forecasts(self.mu, self.y, self.levels),
               "forecast": score_forecasts(self.x, self.y, self.levels)}
        return {"raw": raw, "normalized": normalize_scores(raw)}


def combine_series(ds: ForecastDataset, family, model: SpecificationModel, theta,
                   sigma) -> CombinedSeries:
    """Single-forecaster Gaussian densities for every row with a usable ``sigma``.

    The level at row ``t`` is ``m(z_t, theta)`` (or ``m(t, theta)`` for
    time-based models).
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size != ds.T:
        raise ValueError("sigma must have one entry per dataset row")
    ok = np.isfinite(sigma)
    if np.any(sigma[ok] <= 0.0):
        raise ValueError("sigma must be positive")
    s = ds.t if model.uses_time else ds.z
    levels = np.atleast_1d(model.level(s, theta))[ok]
    shift = normal_functional(family, levels)
    mu = ds.x[ok] - shift * sigma[ok]
    return CombinedSeries(ds.t[ok], mu, sigma[ok], levels, ds.x[ok], ds.y[ok])
