"""Specification models: parametric maps from a state (or time) to a level in (0, 1).

Every variant computes a real-valued predictor ``eta(s, theta)`` and passes it
through a strictly increasing link, so all parameters are unconstrained apart
from the compact box used by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

LEVEL_EPS = 1e-8
DEFAULT_BOX = 20.0


@dataclass(frozen=True)
class Link:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]


def _logistic_deriv(u):
    s = special.expit(u)
    return s * (1.0 - s)


def _probit_deriv(u):
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


LOGISTIC = Link("logistic", special.expit, _logistic_deriv, special.logit)
PROBIT = Link("probit", special.ndtr, _probit_deriv, special.ndtri)
LINKS = {link.name: link for link in (LOGISTIC, PROBIT)}


def get_link(link: Link | str) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise ValueError(
            f"unknown link {link!r}; a strictly increasing link into (0, 1) is required "
            f"(available: {sorted(LINKS)})"
        ) from None


class SpecificationModel:
    """Base class. Subclasses define the predictor and its parameter gradient."""

    kind: str = ""
    p: int = 0
    uses_time: bool = False
    labels: tuple[str, ...] = ()

    def __init__(self, link: Link | str = LOGISTIC):
        self.link = get_link(link)

    def __repr__(self):
        return f"{type(self).__name__}(link={self.link.name!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __hash__(self):
        return hash(tuple(sorted(self.describe().items())))

    def describe(self) -> dict:
        return {"kind": self.kind, "link": self.link.name}

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.p:
            raise ValueError(f"{self.kind} model has {self.p} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        return theta

    def predictor(self, s, theta) -> np.ndarray:
        raise NotImplementedError

    def predictor_gradient(self, s, theta) -> np.ndarray:
        """Gradient of the predictor in theta, shape ``s.shape + (p,)``."""
        raise NotImplementedError

    def level(self, s, theta):
        theta = self.check_theta(theta)
        eta = self.predictor(np.asarray(s, dtype=float), theta)
        out = np.clip(self.link.fn(eta), LEVEL_EPS, 1.0 - LEVEL_EPS)
        return out.item() if out.ndim == 0 else out

    def level_gradient(self, s, theta) -> np.ndarray:
        theta = self.check_theta(theta)
        s = np.asarray(s, dtype=float)
        eta = self.predictor(s, theta)
        return self.link.deriv(eta)[..., None] * self.predictor_gradient(s, theta)

    def bounds(self, T: int, box: float = DEFAULT_BOX) -> list[tuple[float, float]]:
        return [(-box, box)] * self.p

    def start_lattice(self, T: int, values=(-2.0, 0.0, 2.0), period_grid_size: int = 8):
        grids = [np.asarray(values, dtype=float)] * self.p
        mesh = np.meshgrid(*grids, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


class Constant(SpecificationModel):
    """Constant level ``link(theta_1)``."""

    kind = "constant"
    p = 1
    labels = ("theta_1",)

    def predictor(self, s, theta):
        return np.full(np.shape(s), theta[0])

    def predictor_gradient(self, s, theta):
        return np.ones(np.shape(s) + (1,))


class LogisticLinear(SpecificationModel):
    """Level ``link(theta_1 + z * theta_2)`` in a scalar state ``z``."""

    kind = "logistic_linear"
    p = 2
    labels = ("theta_1", "theta_2")

    def predictor(self, s, theta):
        return theta[0] + s * theta[1]

    def predictor_gradient(self, s, theta):
        s = np.asarray(s, dtype=float)
        return np.stack([np.ones_like(s), s], axis=-1)


class StructuralBreak(SpecificationModel):
    """Level ``link(theta_1)`` after the break time and ``link(theta_2)`` up to it."""

    kind = "break"
    p = 2
    uses_time = True
    labels = ("theta_after", "theta_before")

    def __init__(self, break_time: float, link: Link | str = LOGISTIC):
        super().__init__(link)
        if not np.isfinite(break_time):
            raise ValueError("break_time must be finite")
        self.break_time = float(break_time)

    def __repr__(self):
        return f"StructuralBreak(break_time={self.break_time!r}, link={self.link.name!r})"

    def describe(self):
        return {**super().describe(), "break_time": self.break_time}

    def predictor(self, s, theta):
        return np.where(np.asarray(s) > self.break_time, theta[0], theta[1])

    def predictor_gradient(self, s, theta):
        after = (np.asarray(s) > self.break_time).astype(float)
        return np.stack([after, 1.0 - after], axis=-1)


class Seasonal(SpecificationModel):
    """Level ``link(theta_1 + theta_2 sin(2 pi t / theta_3))``.

    The period ``theta_3`` is confined to ``[2, T]`` during estimation; the
    objective is multi-modal in it, so the start lattice spans a period grid.
    """

    kind = "seasonal"
    p = 3
    uses_time = True
    labels = ("theta_1", "theta_2", "period")

    def check_theta(self, theta):
        theta = super().check_theta(theta)
        if theta[2] == 0.0:
            raise ValueError("seasonal period theta_3 must be non-zero")
        return theta

    def predictor(self, s, theta):
        return theta[0] + theta[1] * np.sin(2.0 * np.pi * s / theta[2])

    def predictor_gradient(self, s, theta):
        s = np.asarray(s, dtype=float)
        arg = 2.0 * np.pi * s / theta[2]
        return np.stack(
            [np.ones_like(s), np.sin(arg), -theta[1] * np.cos(arg) * arg / theta[2]], axis=-1
        )

    def bounds(self, T, box=DEFAULT_BOX):
        return [(-box, box), (-box, box), (2.0, float(max(T, 3)))]

    def start_lattice(self, T, values=(-2.0, 0.0, 2.0), period_grid_size=8):
        periods = np.unique(np.round(np.geomspace(2.0, max(T, 3), period_grid_size), 6))
        vals = np.asarray(values, dtype=float)
        # theta_2 = 0 makes the period irrelevant, so it is left out of the lattice
        amps = vals[vals != 0.0] if np.any(vals != 0.0) else np.array([1.0])
        mesh = np.meshgrid(vals, amps, periods, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def make_model(kind: str, link: Link | str = LOGISTIC, break_time: float | None = None):
    """Build a model from its config name."""
    if kind == "constant":
        return Constant(link)
    if kind == "logistic_linear":
        return LogisticLinear(link)
    if kind == "break":
        if break_time is None:
            raise ValueError("the break model needs a break_time")
        return StructuralBreak(break_time, link)
    if kind == "seasonal":
        return Seasonal(link)
    raise ValueError(
        f"unknown model {kind!r}; expected constant, logistic_linear, break or seasonal"
    )


def level(model: SpecificationModel, s, theta):
    """Level ``m(s, theta)``, clamped into ``(1e-8, 1 - 1e-8)``."""
    return model.level(s, theta)


def level_gradient(model: SpecificationModel, s, theta) -> np.ndarray:
    """Analytic gradient of the unclamped level in theta."""
    return model.level_gradient(s, theta)


def identifiability_warnings(model: SpecificationModel, s) -> list[str]:
    """Flag state series under which some parameters cannot be identified."""
    s = np.asarray(s, dtype=float)
    out = []
    if isinstance(model, LogisticLinear) and np.ptp(s) == 0.0:
        out.append("state column is constant: slope and intercept are not separately identified")
    if isinstance(model, StructuralBreak):
        after = s > model.break_time
        if after.all() or not after.any():
            out.append("break time lies outside the sample: one regime has no observations")
    return out
