"""Identification functions for quantiles and expectiles.

Both identification functions are affine in the level ``tau`` for fixed
``(x, y)``::

    V(x, y; tau) = c0(x, y) + tau * c1(x, y)

with ``c0 = 1{y <= x}``, ``c1 = -1`` for quantiles and
``c0 = (x - y) 1{x >= y}``, ``c1 = -|x - y|`` for expectiles. The GMM code
relies on this to evaluate moments with a single matrix-vector product.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from scipy import special

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class FunctionalFamily(str, Enum):
    """Which class of functionals a point forecast is assumed to report."""

    QUANTILE = "quantile"
    EXPECTILE = "expectile"

    @classmethod
    def parse(cls, value: "FunctionalFamily | str") -> "FunctionalFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown functional family {value!r}; expected 'quantile' or 'expectile'"
            ) from None


def _check_level(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if not np.all((tau > 0.0) & (tau < 1.0)):
        raise ValueError(f"level must lie strictly inside (0, 1), got {tau}")
    return tau


def _unwrap(value):
    value = np.asarray(value)
    return value.item() if value.ndim == 0 else value


def identification_parts(family, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c0, c1)`` with ``V(x, y; tau) = c0 + tau * c1``."""
    family = FunctionalFamily.parse(family)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("forecasts and realizations must be finite")
    if family is FunctionalFamily.QUANTILE:
        c0 = (y <= x).astype(float)
        c1 = -np.ones(np.broadcast(x, y).shape)
    else:
        e = x - y
        c0 = np.where(e >= 0.0, e, 0.0)
        c1 = -np.abs(e)
    return c0, c1


def identification(family, x, y, tau):
    """Identification function ``V(x, y)`` of the ``tau``-quantile or -expectile.

    Quantile: ``1{y <= x} - tau``. Expectile: ``|1{x >= y} - tau| (x - y)``.
    Vectorized over ``x``, ``y`` and ``tau``.
    """
    tau = _check_level(tau)
    c0, c1 = identification_parts(family, x, y)
    return _unwrap(c0 + tau * c1)


def identification_level_derivative(family, x, y, tau):
    """Derivative of :func:`identification` with respect to the level.

    ``-1`` for quantiles and ``-|x - y|`` for expectiles.
    """
    _check_level(tau)
    _, c1 = identification_parts(family, x, y)
    shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(tau)).shape
    return _unwrap(np.broadcast_to(c1, shape).copy())


def normal_cdf(x):
    return special.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def normal_quantile(tau):
    """Quantile function of the standard normal distribution."""
    tau = _check_level(tau)
    return _unwrap(special.ndtri(tau))


def _expectile_equation(x, tau):
    cdf = special.ndtr(x)
    pdf = normal_pdf(x)
    lower = x * cdf + pdf  # integral of (x - y) over y <= x
    upper = pdf - x * (1.0 - cdf)  # integral of (y - x) over y > x
    return (1.0 - tau) * lower - tau * upper, (1.0 - tau) * cdf + tau * (1.0 - cdf)


def normal_expectile(tau, tol: float = 1e-14, max_iter: int = 200):
    """Expectile of the standard normal distribution at level ``tau``.

    Solves ``(1 - tau) E[(x - Y)+] = tau E[(Y - x)+]`` with a Newton iteration
    safeguarded by bisection on the bracket ``[-10, 10]``. The equation is
    strictly increasing in ``x`` so the root is unique.
    """
    tau = _check_level(tau)
    shape = tau.shape
    tau = tau.ravel()
    lo = np.full(tau.shape, -10.0)
    hi = np.full(tau.shape, 10.0)
    x = np.zeros(tau.shape)
    active = np.ones(tau.shape, dtype=bool)
    for _ in range(max_iter):
        f, df = _expectile_equation(x[active], tau[active])
        done = np.abs(f) < tol
        xa, loa, hia = x[active], lo[active], hi[active]
        loa = np.where(f < 0.0, xa, loa)
        hia = np.where(f > 0.0, xa, hia)
        step = xa - f / df
        outside = (step <= loa) | (step >= hia)
        xa = np.where(done, xa, np.where(outside, 0.5 * (loa + hia), step))
        x[active], lo[active], hi[active] = xa, loa, hia
        idx = np.flatnonzero(active)
        active[idx[done | (hia - loa < 1e-15)]] = False
        if not active.any():
            break
    return _unwrap(x.reshape(shape))


def normal_functional(family, tau):
    """Quantile or expectile of ``N(0, 1)`` at level ``tau``."""
    if FunctionalFamily.parse(family) is FunctionalFamily.QUANTILE:
        return normal_quantile(tau)
    return normal_expectile(tau)


def sample_expectile(values, tau, max_iter: int = 10_000) -> float:
    """Empirical expectile by asymmetric-least-squares reweighting.

    Iterates ``x <- sum(w y) / sum(w)`` with ``w = tau`` above ``x`` and
    ``1 - tau`` below until the weight pattern stops changing, at which point
    ``x`` solves the empirical expectile equation exactly (up to rounding).
    """
    y = np.asarray(values, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("sample_expectile needs at least one value")
    tau = float(_check_level(tau))
    x = float(np.mean(y))
    above = y > x
    for _ in range(max_iter):
        w = np.where(above, tau, 1.0 - tau)
        x = float(np.dot(w, y) / w.sum())
        new_above = y > x
        if np.array_equal(new_above, above):
            break
        above = new_above
    return x


def sample_quantile(values, tau) -> float:
    """Empirical quantile as the left-continuous inverse of the ECDF."""
    y = np.sort(np.asarray(values, dtype=float).ravel())
    if y.size == 0:
        raise ValueError("sample_quantile needs at least one value")
    tau = float(_check_level(tau))
    k = math.ceil(tau * y.size - 1e-12)
    return float(y[min(max(k, 1), y.size) - 1])
