"""Simulated forecasting scenarios and the Monte Carlo size/power harness.

All randomness comes from Philox (a counter-based bit generator) keyed by a
:class:`numpy.random.SeedSequence`; replication ``r`` of a Monte Carlo run
uses the entropy ``(base_seed, r)``, so results do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .data import ForecastDataset, align, build_instruments, parse_recipe
from .exceptions import FunctionalGmmError
from .functionals import FunctionalFamily, normal_expectile, normal_functional
from .gmm import HacConfig, OptimizerConfig, two_step_estimate
from .inference import j_test
from .specmodels import SpecificationModel, make_model


def make_rng(seed) -> np.random.Generator:
    """Philox generator for an int or a tuple of non-negative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ArGarchParams:
    """``Y_t = ar Y_{t-1} + sigma_t eps_t``, ``sigma_t^2 = omega + beta sigma_{t-1}^2 + alpha sigma_{t-1}^2 eps_{t-1}^2``."""

    ar: float = 0.5
    omega: float = 0.1
    beta: float = 0.8
    alpha: float = 0.1

    def __post_init__(self):
        if self.omega <= 0.0:
            raise ValueError("omega must be positive")
        if self.alpha < 0.0 or self.beta < 0.0 or self.alpha + self.beta >= 1.0:
            raise ValueError("GARCH parameters must satisfy alpha, beta >= 0 and alpha + beta < 1")

    @property
    def stationary_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)


@dataclass(frozen=True)
class SimPath:
    y: np.ndarray
    sigma: np.ndarray
    eps: np.ndarray
    seed: object
    params: ArGarchParams
    burn_in: int

    @property
    def T(self) -> int:
        return self.y.size


def simulate_ar_garch(T: int, params: ArGarchParams = ArGarchParams(), seed=0,
                      burn_in: int = 500) -> SimPath:
    """Simulate the AR(1)-GARCH(1,1) process and keep the last ``T`` periods.

    The recursion starts at ``y = 0`` with ``sigma^2`` at its stationary value.
    """
    if T < 10:
        raise ValueError("T must be at least 10")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    n = T + burn_in
    eps = make_rng(seed).standard_normal(n)
    ar, omega, beta, alpha = params.ar, params.omega, params.beta, params.alpha
    sig2 = np.empty(n)
    y = np.empty(n)
    s2 = params.stationary_variance
    prev_y = 0.0
    e2 = eps * eps
    for t in range(n):
        if t:
            s2 = omega + beta * s2 + alpha * s2 * e2[t - 1]
        sig2[t] = s2
        prev_y = ar * prev_y + math.sqrt(s2) * eps[t]
        y[t] = prev_y
    keep = slice(burn_in, n)
    return SimPath(y[keep], np.sqrt(sig2[keep]), eps[keep], seed, params, burn_in)


def expectile_level(a: float) -> float:
    """Level ``1 / (1 + a)`` of the expectile that is optimal under the asymmetric
    squared loss weighting over-prediction by ``a``."""
    if a <= 0.0:
        raise ValueError("asymmetry a must be positive")
    return 1.0 / (1.0 + a)


def full_info_forecast(path: SimPath, a: float = 1.85) -> np.ndarray:
    """Optimal forecast given ``y_{t-1}, y_{t-2}, ...``.

    ``x_t = ar y_{t-1} + sigma_t e(1/(1+a))`` with the exact standard-normal
    expectile; ``x_0`` is NaN.
    """
    shift = normal_expectile(expectile_level(a))
    x = np.full(path.T, np.nan)
    x[1:] = path.params.ar * path.y[:-1] + path.sigma[1:] * shift
    return x


def rigid_variance(path: SimPath) -> np.ndarray:
    """Two-step-ahead conditional variance ``ar^2 sigma_{t-1}^2 + omega + (alpha+beta) sigma_{t-1}^2``."""
    p = path.params
    s2 = np.square(path.sigma)
    v = np.full(path.T, np.nan)
    v[1:] = p.ar**2 * s2[:-1] + (p.omega + (p.alpha + p.beta) * s2[:-1])
    return v


def rigid_info_forecast(path: SimPath, a: float = 1.85) -> np.ndarray:
    """Forecast of a forecaster who only sees ``y_{t-2}, y_{t-3}, ...``.

    Mean ``ar^2 y_{t-2}``, variance :func:`rigid_variance`; the two-step
    conditional is treated as Gaussian when applying the expectile shift.
    The first two entries are NaN.
    """
    if path.T < 3:
        raise ValueError("the rigid forecast needs T >= 3")
    shift = normal_expectile(expectile_level(a))
    x = np.full(path.T, np.nan)
    x[2:] = path.params.ar**2 * path.y[:-2] + np.sqrt(rigid_variance(path)[2:]) * shift
    return x


def _state(path: SimPath, model: SpecificationModel, state_lag: int = 1) -> np.ndarray:
    if model.uses_time:
        return np.arange(1, path.T + 1, dtype=float)
    s = np.full(path.T, np.nan)
    s[state_lag:] = path.y[:-state_lag]
    return s


def state_dependent_forecast(path: SimPath, family, model: SpecificationModel, theta,
                             state_lag: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Forecast reporting the ``m(s_t, theta)``-quantile or -expectile of ``Y_t | y_{t-1}, ...``.

    The state is ``y_{t-state_lag}`` (or the time index for time-based
    models). Returns ``(x, levels)``, NaN where the state is unavailable.
    """
    s = _state(path, model, state_lag)
    ok = np.isfinite(s)
    levels = np.full(path.T, np.nan)
    levels[ok] = model.level(s[ok], theta)
    ok[0] = False
    x = np.full(path.T, np.nan)
    x[ok] = (path.params.ar * path.y[np.flatnonzero(ok) - 1]
             + path.sigma[ok] * normal_functional(family, levels[ok]))
    return x, levels


def path_dataset(path: SimPath, x: np.ndarray, state_lag: int = 1, extra=None) -> ForecastDataset:
    """Dataset ``(t, y_t, x_t, z_t = y_{t-state_lag})`` over the rows where ``x`` exists."""
    x = np.asarray(x, dtype=float)
    start = max(int(np.argmax(np.isfinite(x))), state_lag)
    t = np.arange(1, path.T + 1, dtype=float)
    z = np.full(path.T, np.nan)
    z[state_lag:] = path.y[:-state_lag]
    extra = {k: np.asarray(v, dtype=float)[start:] for k, v in (extra or {}).items()}
    return ForecastDataset(t[start:], path.y[start:], x[start:], z[start:], extra)


def asymmetric_info_scenario(T: int, seed=0, innovation=stats.norm(), user_state=stats.norm(),
                             forecaster_state=stats.norm()) -> ForecastDataset:
    """Mean forecast that looks like a state-dependent quantile to the user.

    ``y_t = z^f_t + z^u_t + eps_t`` with ``eps ~ F`` (``innovation``),
    ``z^u ~ G`` (``user_state``). The forecaster reports ``x_t = z^f_t``, the
    user's state is ``z_t = z^u_t``, and ``extra["true_level"]`` is
    ``F(-z^u_t)``. Distributions are anything with ``rvs(size, random_state)``
    (and ``cdf`` for ``innovation``).
    """
    rng = make_rng(seed)
    zf = np.asarray(forecaster_state.rvs(size=T, random_state=rng), dtype=float)
    zu = np.asarray(user_state.rvs(size=T, random_state=rng), dtype=float)
    eps = np.asarray(innovation.rvs(size=T, random_state=rng), dtype=float)
    y = zf + zu + eps
    return ForecastDataset(np.arange(1, T + 1), y, zf, zu,
                           {"true_level": innovation.cdf(-zu)})


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McConfig:
    T_grid: tuple[int, ...] = (50, 100, 250, 500, 1000, 2000)
    reps: int = 500
    forecaster: str = "full"
    families: tuple[str, ...] = ("quantile", "expectile")
    timings: tuple[str, ...] = ("lagged", "nonlagged")
    asymmetry: float = 1.85
    nominal: float = 0.05
    base_seed: int = 0
    burn_in: int = 500
    model: str = "logistic_linear"
    recipe: str = "rationality"
    state_lag: int = 1
    params: ArGarchParams = ArGarchParams()
    hac: HacConfig = HacConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    workers: int | None = 1

    def __post_init__(self):
        object.__setattr__(self, "T_grid", tuple(int(T) for T in self.T_grid))
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "timings", tuple(self.timings))
        if self.forecaster not in ("full", "rigid"):
            raise ValueError("forecaster must be 'full' or 'rigid'")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        for timing in self.timings:
            if timing not in ("lagged", "nonlagged"):
                raise ValueError(f"unknown instrument timing {timing!r}")
        for fam in self.families:
            FunctionalFamily.parse(fam)
        if min(self.T_grid) < 10:
            raise ValueError("sample sizes must be at least 10")


@dataclass
class McRow:
    T: int
    setting: str
    family: str
    rate: float
    reps: int
    failures: int
    role: str
    p_values: list[float] = field(default_factory=list, repr=False)
    statistics: list[float] = field(default_factory=list, repr=False)
    df: int = 0


@dataclass
class McReport:
    config: McConfig
    rows: list[McRow]
    seeds: list[list[int]]
    warnings: list[str] = field(default_factory=list)

    def row(self, T: int, setting: str, family: str) -> McRow:
        for r in self.rows:
            if (r.T, r.setting, r.family) == (T, setting, family):
                return r
        raise KeyError((T, setting, family))

    def rate(self, T: int, setting: str, family: str) -> float:
        return self.row(T, setting, family).rate

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["T", "setting", "family", "rate", "reps", "failures"])
            for r in self.rows:
                writer.writerow([r.T, r.setting, r.family, "%.17g" % r.rate, r.reps, r.failures])

    def summary(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "seed_rule": "Philox(SeedSequence((base_seed, replication)))",
            "seeds": self.seeds,
            "rows": [
                {"T": r.T, "setting": r.setting, "family": r.family, "role": r.role,
                 "rate": r.rate, "reps": r.reps, "failures": r.failures, "df": r.df}
                for r in self.rows
            ],
            "warnings": list(self.warnings),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def _forecast(cfg: McConfig, path: SimPath) -> np.ndarray:
    if cfg.forecaster == "full":
        return full_info_forecast(path, cfg.asymmetry)
    return rigid_info_forecast(path, cfg.asymmetry)


def _lead(cfg: McConfig) -> int:
    recipe = parse_recipe(cfg.recipe)
    lagged = recipe.lagged(1) if "lagged" in cfg.timings else recipe
    forecast_lead = 1 if cfg.forecaster == "full" else 2
    return max(forecast_lead, cfg.state_lag) + lagged.max_lag


def _replicate(cfg: McConfig, rep: int) -> list[tuple]:
    """All (T, timing, family) outcomes for one replication, on common random numbers."""
    lead = _lead(cfg)
    path = simulate_ar_garch(max(cfg.T_grid) + lead, cfg.params, (cfg.base_seed, rep), cfg.burn_in)
    x = _forecast(cfg, path)
    model = make_model(cfg.model)
    base = parse_recipe(cfg.recipe)
    out = []
    for T in cfg.T_grid:
        sub = SimPath(path.y[: T + lead], path.sigma[: T + lead], path.eps[: T + lead],
                      path.seed, path.params, path.burn_in)
        ds = path_dataset(sub, x[: T + lead], cfg.state_lag)
        for timing in cfg.timings:
            recipe = base.lagged(1) if timing == "lagged" else base
            for fam in cfg.families:
                try:
                    w = build_instruments(ds, recipe, fam).tail(T)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        fit = two_step_estimate(align(ds, w), w, fam, model, cfg.hac, cfg.optimizer)
                    res = j_test(fit)
                    out.append((T, timing, fam, res.statistic, res.p_value, res.df))
                except (FunctionalGmmError, np.linalg.LinAlgError):
                    out.append((T, timing, fam, None, None, None))
    return out


def _replicate_star(args):
    return _replicate(*args)


def mc_size_power(cfg: McConfig) -> McReport:
    """Rejection rates of the J-test at ``cfg.nominal`` over replications.

    For the rigid forecaster, lagged instruments measure size and non-lagged
    ones power; for the full-information forecaster both measure size.
    Failed fits are counted separately and excluded from the rates.
    """
    workers = cfg.workers or os.cpu_count() or 1
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    if workers <= 1:
        results = [_replicate_star(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=max(1, cfg.reps // (4 * workers))))

    rows = []
    for T in cfg.T_grid:
        for timing in cfg.timings:
            for fam in cfg.families:
                stats_, pvals, df = [], [], 0
                failures = 0
                for rep_out in results:
                    for (T_, timing_, fam_, stat, pval, d) in rep_out:
                        if (T_, timing_, fam_) != (T, timing, fam):
                            continue
                        if pval is None:
                            failures += 1
                        else:
                            stats_.append(stat)
                            pvals.append(pval)
                            df = d
                ok = len(pvals)
                rate = float(np.mean(np.asarray(pvals) < cfg.nominal)) if ok else math.nan
                role = "power" if (cfg.forecaster == "rigid" and timing == "nonlagged") else "size"
                rows.append(McRow(T, timing, fam, rate, cfg.reps, failures, role, pvals, stats_, df))
    notes = []
    if cfg.reps < 100:
        notes.append(f"only {cfg.reps} replications: rejection rates have large binomial error")
    return McReport(cfg, rows, [[cfg.base_seed, r] for r in range(cfg.reps)], notes)
