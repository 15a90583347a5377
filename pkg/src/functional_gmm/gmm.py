"""Moment conditions, HAC covariance and two-step GMM estimation of the level model."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import ForecastDataset, InstrumentMatrix, align
from .exceptions import ConvergenceError, IdentificationError, SingularCovarianceError
from .functionals import FunctionalFamily, identification_parts
from .specmodels import SpecificationModel, identifiability_warnings

KERNELS = ("bartlett", "parzen", "quadratic_spectral")
MAX_CONDITION = 1e12
EIGEN_FLOOR = 1e-12


@dataclass(frozen=True)
class HacConfig:
    """Kernel and bandwidth of the HAC estimator.

    ``bandwidth="auto"`` uses ``floor(4 (T / 100)^(2/9))``.
    """

    kernel: str = "bartlett"
    bandwidth: int | str = "auto"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown HAC kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.bandwidth != "auto":
            if isinstance(self.bandwidth, bool) or not isinstance(self.bandwidth, (int, np.integer)):
                raise ValueError("HAC bandwidth must be 'auto' or a non-negative integer")
            if self.bandwidth < 0:
                raise ValueError("HAC bandwidth must be non-negative")

    def resolve(self, T: int) -> int:
        if self.bandwidth == "auto":
            return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))
        return int(self.bandwidth)


@dataclass(frozen=True)
class OptimizerConfig:
    """Deterministic multi-start Nelder-Mead settings.

    The objective is evaluated on the start lattice (per-coordinate values
    ``lattice``; seasonal models use a period grid for the last coordinate)
    and the simplex search is run from the ``n_starts`` best lattice points,
    plus the step-1 solution in step 2.
    """

    lattice: tuple[float, ...] = (-2.0, 0.0, 2.0)
    n_starts: int = 3
    xatol: float = 1e-9
    max_evals: int = 10_000
    box: float = 20.0
    initial_step: float = 0.5
    period_grid_size: int = 8


@dataclass(frozen=True)
class MomentSeries:
    """Per-period moments ``g_t = V(x_t, y_t; m(z_t, theta)) w_t`` (T x q)."""

    g: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.g.mean(axis=0)

    @property
    def T(self) -> int:
        return self.g.shape[0]


@dataclass
class GmmFit:
    """Result of :func:`two_step_estimate`.

    ``Sigma`` is the asymptotic covariance ``(G' S^-1 G)^-1`` of
    ``sqrt(T) (theta_hat - theta_0)``; :attr:`cov` divides it by ``T_eff``.
    """

    theta: np.ndarray
    S: np.ndarray
    G: np.ndarray
    Sigma: np.ndarray
    objective: float
    T_eff: int
    gbar: np.ndarray
    family: FunctionalFamily
    model: SpecificationModel
    instrument_labels: tuple[str, ...]
    step1_theta: np.ndarray
    hac: HacConfig = field(default_factory=HacConfig)
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @property
    def cov(self) -> np.ndarray:
        return asymptotic_covariance(self)

    @property
    def param_labels(self) -> tuple[str, ...]:
        return self.model.labels

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "model": self.model.describe(),
            "param_labels": list(self.param_labels),
            "theta": self.theta.tolist(),
            "cov": self.cov.tolist(),
            "T_eff": self.T_eff,
            "q": self.q,
            "p": self.p,
            "instrument_labels": list(self.instrument_labels),
            "objective": self.objective,
            "moment_mean": self.gbar.tolist(),
            "S": self.S.tolist(),
            "G": self.G.tolist(),
            "step1_theta": self.step1_theta.tolist(),
            "hac": {"kernel": self.hac.kernel, "bandwidth": self.hac.bandwidth},
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
        }


# --------------------------------------------------------------------------
# moments


class _MomentProblem:
    """Precomputed pieces so that ``g_T(theta) = a + B m(theta)`` is one matvec."""

    def __init__(self, ds: ForecastDataset, w: InstrumentMatrix, family, model):
        ds = align(ds, w)
        self.family = FunctionalFamily.parse(family)
        self.model = model
        self.W = w.w
        self.T, self.q = self.W.shape
        self.c0, self.c1 = identification_parts(self.family, ds.x, ds.y)
        self.s = ds.t if model.uses_time else ds.z
        self.a = self.W.T @ self.c0 / self.T
        self.B = (self.W * self.c1[:, None]).T / self.T

    def levels(self, theta):
        return np.atleast_1d(self.model.level(self.s, theta))

    def gbar(self, theta) -> np.ndarray:
        return self.a + self.B @ self.levels(theta)

    def series(self, theta) -> np.ndarray:
        v = self.c0 + self.levels(theta) * self.c1
        return v[:, None] * self.W

    def jacobian(self, theta) -> np.ndarray:
        return self.B @ self.model.level_gradient(self.s, theta)


def moment_series(ds: ForecastDataset, w: InstrumentMatrix, family,
                  model: SpecificationModel, theta) -> MomentSeries:
    """Moments ``V(x_t, y_t; m(s_t, theta)) w_t`` for every instrument row."""
    return MomentSeries(_MomentProblem(ds, w, family, model).series(theta))


def moment_jacobian(ds: ForecastDataset, w: InstrumentMatrix, family,
                    model: SpecificationModel, theta) -> np.ndarray:
    """``G_T = (1/T) sum_t dV/dtau * m_theta(s_t, theta) w_t``, shape q x p."""
    return _MomentProblem(ds, w, family, model).jacobian(theta)


# --------------------------------------------------------------------------
# HAC


def kernel_weight(kernel: str, u) -> np.ndarray:
    """Kernel weight ``k(u)`` for ``u >= 0``."""
    u = np.asarray(u, dtype=float)
    if kernel == "bartlett":
        return np.clip(1.0 - u, 0.0, None)
    if kernel == "parzen":
        return np.where(u <= 0.5, 1.0 - 6.0 * u**2 + 6.0 * u**3,
                        np.where(u <= 1.0, 2.0 * (1.0 - u) ** 3, 0.0))
    if kernel == "quadratic_spectral":
        with np.errstate(divide="ignore", invalid="ignore"):
            a = 6.0 * np.pi * u / 5.0
            k = 25.0 / (12.0 * np.pi**2 * u**2) * (np.sin(a) / a - np.cos(a))
        return np.where(u == 0.0, 1.0, k)
    raise ValueError(f"unknown HAC kernel {kernel!r}")


def _floor_eigenvalues(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    floor = EIGEN_FLOOR * max(np.trace(S), np.finfo(float).tiny)
    if vals.min() >= floor:
        return S
    vals = np.maximum(vals, floor)
    S = (vecs * vals) @ vecs.T
    return 0.5 * (S + S.T)


def _hac_unfloored(g: np.ndarray, cfg: HacConfig) -> np.ndarray:
    if g.ndim == 1:
        g = g[:, None]
    T = g.shape[0]
    h = cfg.resolve(T)
    if h >= T:
        raise ValueError(f"HAC bandwidth {h} must be smaller than T = {T}")
    gc = g - g.mean(axis=0)
    S = gc.T @ gc / T
    if h > 0:
        max_lag = T - 1 if cfg.kernel == "quadratic_spectral" else h
        for j in range(1, max_lag + 1):
            k = float(kernel_weight(cfg.kernel, j / (h + 1.0)))
            if k == 0.0:
                continue
            gamma = gc[j:].T @ gc[:-j] / T
            S = S + k * (gamma + gamma.T)
    return 0.5 * (S + S.T)


def hac_covariance(ms: MomentSeries | np.ndarray, cfg: HacConfig = HacConfig()) -> np.ndarray:
    """Kernel-weighted sum of demeaned moment autocovariances.

    ``S = Gamma_0 + sum_j k(j / (h + 1)) (Gamma_j + Gamma_j')`` with
    ``Gamma_j = (1/T) sum_t (g_t - gbar)(g_{t-j} - gbar)'``. Bartlett and
    Parzen weights vanish beyond lag ``h``; the quadratic-spectral kernel
    uses every lag. Eigenvalues below ``1e-12 * trace`` are raised to it.
    """
    g = ms.g if isinstance(ms, MomentSeries) else np.asarray(ms, dtype=float)
    return _floor_eigenvalues(_hac_unfloored(g, cfg))


def _sym_inverse(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    floor = EIGEN_FLOOR * max(np.trace(S), np.finfo(float).tiny)
    vals = np.maximum(vals, floor)
    inv = (vecs / vals) @ vecs.T
    return 0.5 * (inv + inv.T)


def _condition(S: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(S)
    return float(vals.max() / vals.min()) if vals.min() > 0 else math.inf


# --------------------------------------------------------------------------
# optimizer


def _order_key(f: float, theta: np.ndarray):
    return (f, float(np.linalg.norm(theta)), tuple(theta))


def _initial_simplex(x0, bounds, step):
    x0 = np.array(x0, dtype=float)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    x0 = np.clip(x0, lo, hi)
    simplex = [x0]
    for i in range(x0.size):
        v = x0.copy()
        v[i] = x0[i] + step if x0[i] + step <= hi[i] else x0[i] - step
        simplex.append(v)
    return np.array(simplex)


def _select(candidates):
    """Best objective; near-ties broken by smallest norm, then lexicographically."""
    fmin = min(c["fun"] for c in candidates)
    tol = 1e-9 * abs(fmin) + 1e-15
    tied = [c for c in candidates if c["fun"] <= fmin + tol]
    return min(tied, key=lambda c: (float(np.linalg.norm(c["theta"])), tuple(c["theta"])))


def multistart_minimize(fun, lattice: np.ndarray, bounds, opt: OptimizerConfig,
                        extra_starts=()) -> tuple[np.ndarray, float, list[dict]]:
    """Run Nelder-Mead from the best lattice points and any extra starts.

    Returns ``(theta, value, trace)``. Raises :class:`ConvergenceError` if no
    run reaches a simplex diameter below ``opt.xatol`` within
    ``opt.max_evals`` evaluations.
    """
    values = [fun(pt) for pt in lattice]
    order = sorted(range(len(lattice)), key=lambda i: _order_key(values[i], lattice[i]))
    starts = [lattice[i] for i in order[: opt.n_starts]] + [np.asarray(s) for s in extra_starts]
    trace = []
    for x0 in starts:
        res = minimize(
            fun, x0, method="Nelder-Mead", bounds=bounds,
            options={
                "xatol": opt.xatol, "fatol": np.inf, "maxfev": opt.max_evals,
                "maxiter": opt.max_evals,
                "initial_simplex": _initial_simplex(x0, bounds, opt.initial_step),
            },
        )
        trace.append({
            "start": np.asarray(x0, dtype=float).tolist(),
            "theta": np.asarray(res.x, dtype=float),
            "fun": float(res.fun),
            "nfev": int(res.nfev),
            "converged": bool(res.success),
        })
    converged = [t for t in trace if t["converged"]]
    if not converged:
        raise ConvergenceError(
            "Nelder-Mead did not converge from any start",
            diagnostics={"trace": _jsonable_trace(trace)},
        )
    best = _select(converged)
    return best["theta"], best["fun"], trace


def _jsonable_trace(trace):
    return [{**t, "theta": np.asarray(t["theta"]).tolist()} for t in trace]


# --------------------------------------------------------------------------
# estimation


def two_step_estimate(ds: ForecastDataset, w: InstrumentMatrix, family,
                      model: SpecificationModel, hac: HacConfig = HacConfig(),
                      opt: OptimizerConfig = OptimizerConfig()) -> GmmFit:
    """Two-step GMM estimate of the level-model parameters.

    Step 1 minimizes ``g_T' g_T``; the HAC covariance ``S`` is computed at
    that solution; step 2 minimizes ``g_T' S^-1 g_T`` starting from the
    lattice and the step-1 solution. ``S``, ``G`` and ``Sigma`` in the
    result are evaluated at the step-2 estimate.

    Raises
    ------
    ValueError
        Fewer instruments than parameters.
    ConvergenceError, SingularCovarianceError, IdentificationError
        Numerical failures, each with diagnostics attached.
    """
    family = FunctionalFamily.parse(family)
    prob = _MomentProblem(ds, w, family, model)
    T, q, p = prob.T, prob.q, model.p
    if q < p:
        raise ValueError(f"{q} instruments cannot identify {p} parameters")
    notes = identifiability_warnings(model, prob.s)
    if T < 10 * p:
        notes.append(f"effective sample size {T} is below 10 x {p} parameters")
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)

    bounds = model.bounds(T, opt.box)
    lattice = model.start_lattice(T, opt.lattice, opt.period_grid_size)

    def identity_objective(theta):
        g = prob.gbar(theta)
        return float(g @ g)

    theta1, f1, trace1 = multistart_minimize(identity_objective, lattice, bounds, opt)

    S1_raw = _hac_unfloored(prob.series(theta1), hac)
    cond1 = _condition(S1_raw)
    diagnostics = {"step1_trace": _jsonable_trace(trace1), "step1_objective": f1,
                   "condition_S_step1": cond1}
    if cond1 > MAX_CONDITION:
        raise SingularCovarianceError(
            f"HAC covariance at the step-1 estimate is singular (condition number {cond1:.3g}); "
            "use fewer or less collinear instruments",
            diagnostics=diagnostics,
        )
    weight = _sym_inverse(_floor_eigenvalues(S1_raw))

    def weighted_objective(theta):
        g = prob.gbar(theta)
        return float(g @ weight @ g)

    theta2, f2, trace2 = multistart_minimize(weighted_objective, lattice, bounds, opt,
                                             extra_starts=[theta1])
    diagnostics["step2_trace"] = _jsonable_trace(trace2)
    diagnostics["step2_objective_at_step1"] = weighted_objective(theta1)

    S_raw = _hac_unfloored(prob.series(theta2), hac)
    cond = _condition(S_raw)
    diagnostics["condition_S"] = cond
    if cond > MAX_CONDITION:
        raise SingularCovarianceError(
            f"HAC covariance at the estimate is singular (condition number {cond:.3g}); "
            "use fewer or less collinear instruments",
            diagnostics=diagnostics,
        )
    S = _floor_eigenvalues(S_raw)
    G = prob.jacobian(theta2)
    sv = np.linalg.svd(G, compute_uv=False)
    diagnostics["singular_values_G"] = sv.tolist()
    if sv.min() <= 1e-10 * max(sv.max(), np.finfo(float).tiny):
        raise IdentificationError(
            "moment Jacobian is rank deficient: parameters "
            f"{list(model.labels)} are not all identified by these instruments",
            diagnostics=diagnostics,
        )
    info = G.T @ _sym_inverse(S) @ G
    diagnostics["condition_information"] = _condition(0.5 * (info + info.T))
    Sigma = np.linalg.inv(info)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return GmmFit(
        theta=np.asarray(theta2, dtype=float), S=S, G=G, Sigma=Sigma, objective=f2,
        T_eff=T, gbar=prob.gbar(theta2), family=family, model=model,
        instrument_labels=w.labels, step1_theta=np.asarray(theta1, dtype=float),
        hac=hac, diagnostics=diagnostics, warnings=notes,
    )


def asymptotic_covariance(fit: GmmFit) -> np.ndarray:
    """Finite-sample covariance of ``theta_hat``: ``(G' S^-1 G)^-1 / T_eff``."""
    return fit.Sigma / fit.T_eff
