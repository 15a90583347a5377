"""Command-line front end.

Every command reads an optional JSON config (``--config``), applies flag
overrides on top, validates the result against a schema, echoes the
effective config into the output directory and writes its results there.

Exit codes: 0 success, 2 invalid config or data, 3 numerical failure (a
``diagnostics.json`` is written next to the other outputs).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .combine import combine_series, sigma_from_differences
from .data import align, build_instruments, load_csv
from .exceptions import DataValidationError, EstimationError
from .functionals import FunctionalFamily
from .gmm import KERNELS, HacConfig, OptimizerConfig, two_step_estimate
from .inference import builtin_restriction, j_test, level_confidence_band, wald_test
from .sim import (ArGarchParams, McConfig, asymmetric_info_scenario, full_info_forecast,
                  mc_size_power, path_dataset, rigid_info_forecast, simulate_ar_garch)
from .specmodels import LINKS, make_model

COMMANDS = ("estimate", "jtest", "wald", "band", "combine", "simulate", "mc")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
CONFIG_ECHO = "effective_config.json"

DEFAULTS = {
    "data": None,
    "columns": None,
    "state_lag": None,
    "family": "quantile",
    "model": "logistic_linear",
    "link": "logistic",
    "break_time": None,
    "instruments": None,  # "gdp" for single fits, "rationality" for mc
    "instrument_level": 0.5,
    "hac_kernel": "bartlett",
    "hac_bandwidth": "auto",
    "optimizer": {},
    "restrict": "zero_slope",
    "grid": "-3:3:61",
    "confidence": 0.8,
    "sigma_recipe": "diff2",
    "dgp": "ar_garch",
    "T": 500,
    "seed": 0,
    "forecaster": "full",
    "asymmetry": 1.85,
    "burn_in": 500,
    "reps": 500,
    "T_grid": [250, 1000, 2000],
    "instrument_timing": ["lagged", "nonlagged"],
    "families": ["quantile", "expectile"],
    "workers": None,
    "nominal": 0.05,
    "output": "output",
}

_POS_INT = {"type": "integer", "minimum": 1}
_OPT_FIELDS = {
    "lattice": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    "n_starts": _POS_INT,
    "xatol": {"type": "number", "exclusiveMinimum": 0},
    "max_evals": _POS_INT,
    "box": {"type": "number", "exclusiveMinimum": 0},
    "initial_step": {"type": "number", "exclusiveMinimum": 0},
    "period_grid_size": _POS_INT,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "data": {"type": ["string", "null"]},
        "columns": {"type": ["object", "null"],
                    "additionalProperties": {"enum": ["t", "y", "x", "z", "custom"]}},
        "state_lag": {"type": ["integer", "null"], "minimum": 1},
        "family": {"enum": [f.value for f in FunctionalFamily]},
        "model": {"enum": ["constant", "logistic_linear", "break", "seasonal"]},
        "link": {"enum": list(LINKS)},
        "break_time": {"type": ["number", "null"]},
        "instruments": {"type": ["string", "null"], "minLength": 1},
        "instrument_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "hac_kernel": {"enum": list(KERNELS)},
        "hac_bandwidth": {"oneOf": [{"const": "auto"}, {"type": "integer", "minimum": 0}]},
        "optimizer": {"type": "object", "additionalProperties": False, "properties": _OPT_FIELDS},
        "restrict": {"type": "string"},
        "grid": {"type": "string", "pattern": r"^[^:]+:[^:]+:\d+$"},
        "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "sigma_recipe": {"type": "string", "pattern": r"^(diff2|column:.+)$"},
        "dgp": {"enum": ["ar_garch", "asym_info"]},
        "T": {"type": "integer", "minimum": 3},
        "seed": {"type": "integer", "minimum": 0},
        "forecaster": {"enum": ["full", "rigid"]},
        "asymmetry": {"type": "number", "exclusiveMinimum": 0},
        "burn_in": {"type": "integer", "minimum": 0},
        "reps": _POS_INT,
        "T_grid": {"type": "array", "items": {"type": "integer", "minimum": 10}, "minItems": 1},
        "instrument_timing": {"type": "array", "items": {"enum": ["lagged", "nonlagged"]},
                              "minItems": 1, "uniqueItems": True},
        "families": {"type": "array", "items": {"enum": [f.value for f in FunctionalFamily]},
                     "minItems": 1, "uniqueItems": True},
        "workers": {"type": ["integer", "null"], "minimum": 1},
        "nominal": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "output": {"type": "string", "minLength": 1},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


# --------------------------------------------------------------------------
# config handling


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _bandwidth(text: str):
    return text if text == "auto" else int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="functional-gmm",
        description="Estimate and test the functional reported by a series of point forecasts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its entries")
        p.add_argument("--output", default=S, help="output directory")

    def fitting(p):
        p.add_argument("--data", default=S, help="CSV with columns t, y, x, z")
        p.add_argument("--family", default=S, choices=[f.value for f in FunctionalFamily])
        p.add_argument("--model", default=S,
                       choices=["constant", "logistic_linear", "break", "seasonal"])
        p.add_argument("--link", default=S, choices=list(LINKS))
        p.add_argument("--break-time", dest="break_time", type=float, default=S)
        p.add_argument("--state-lag", dest="state_lag", type=int, default=S,
                       help="use y lagged by this many rows as the state")
        p.add_argument("--instruments", default=S, help="instrument recipe or preset name")
        p.add_argument("--hac-kernel", dest="hac_kernel", default=S, choices=list(KERNELS))
        p.add_argument("--hac-bandwidth", dest="hac_bandwidth", type=_bandwidth, default=S,
                       help="'auto' or a non-negative integer")

    for name in COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name in ("estimate", "jtest", "wald", "band", "combine"):
            fitting(p)
        if name == "wald":
            p.add_argument("--restrict", default=S, help="zero_slope or no_break")
        if name == "band":
            p.add_argument("--grid", default=S, help="lo:hi:n state grid")
            p.add_argument("--confidence", type=float, default=S)
        if name == "combine":
            p.add_argument("--sigma-recipe", dest="sigma_recipe", default=S,
                           help="diff2 or column:<name>")
        if name in ("simulate", "mc"):
            p.add_argument("--seed", type=int, default=S)
            p.add_argument("--forecaster", default=S, choices=["full", "rigid"])
            p.add_argument("--asymmetry", type=float, default=S)
            p.add_argument("--burn-in", dest="burn_in", type=int, default=S)
        if name == "simulate":
            p.add_argument("--dgp", default=S, choices=["ar_garch", "asym_info"])
            p.add_argument("--T", dest="T", type=int, default=S)
        if name == "mc":
            p.add_argument("--reps", type=int, default=S)
            p.add_argument("--T-grid", dest="T_grid", type=lambda s: [int(v) for v in _csv_list(s)],
                           default=S, help="comma-separated sample sizes")
            p.add_argument("--instrument-timing", dest="instrument_timing", type=_csv_list,
                           default=S, help="lagged, nonlagged or both comma-separated")
            p.add_argument("--families", type=_csv_list, default=S)
            p.add_argument("--model", default=S, choices=["constant", "logistic_linear"])
            p.add_argument("--instruments", default=S)
            p.add_argument("--hac-bandwidth", dest="hac_bandwidth", type=_bandwidth, default=S)
            p.add_argument("--workers", type=int, default=S)
    return parser


def resolve_config(command: str, file_config: dict, overrides: dict) -> dict:
    """Defaults, then the config file, then flags; validated against :data:`SCHEMA`."""
    merged = dict(DEFAULTS)
    merged.update(file_config)
    merged.update(overrides)
    if merged.get("command", command) != command:
        raise ConfigError("command", f"config is for {merged['command']!r}, not {command!r}")
    merged["command"] = command
    if merged["instruments"] is None:
        merged["instruments"] = "rationality" if command == "mc" else "gdp"
    try:
        jsonschema.validate(merged, SCHEMA)
    except jsonschema.ValidationError as err:
        key = ".".join(str(p) for p in err.absolute_path)
        if err.validator == "additionalProperties":
            known = SCHEMA["properties"] if not key else _OPT_FIELDS
            unknown = sorted(set(err.instance) - set(known))
            key = ".".join(filter(None, [key, unknown[0] if unknown else ""]))
            raise ConfigError(key, "unknown key") from None
        raise ConfigError(key or "<root>", err.message) from None
    if command in ("estimate", "jtest", "wald", "band", "combine") and not merged["data"]:
        raise ConfigError("data", "a data file is required")
    if merged["model"] == "break" and merged["break_time"] is None:
        raise ConfigError("break_time", "the break model needs a break time")
    return merged


def _read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path!r}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"{path!r} is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config", "the config file must hold a JSON object")
    return cfg


def hac_config(cfg: dict) -> HacConfig:
    return HacConfig(cfg["hac_kernel"], cfg["hac_bandwidth"])


def optimizer_config(cfg: dict) -> OptimizerConfig:
    opt = dict(cfg["optimizer"])
    if "lattice" in opt:
        opt["lattice"] = tuple(opt["lattice"])
    return OptimizerConfig(**opt)


def parse_grid(text: str) -> np.ndarray:
    lo, hi, n = text.split(":")
    try:
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError("grid", f"cannot parse {text!r} as lo:hi:n") from None
    if not (math.isfinite(lo) and math.isfinite(hi)) or n < 1:
        raise ConfigError("grid", "bounds must be finite and n at least 1")
    return np.linspace(lo, hi, n)


# --------------------------------------------------------------------------
# library wiring shared with the tests


def fit_from_config(cfg: dict):
    """Load the data and run the two-step estimator described by ``cfg``.

    Returns ``(dataset, aligned dataset, fit)``.
    """
    ds = load_csv(cfg["data"], cfg["columns"], cfg["state_lag"])
    try:
        model = make_model(cfg["model"], cfg["link"], cfg["break_time"])
    except ValueError as err:
        raise ConfigError("model", str(err)) from None
    try:
        w = build_instruments(ds, cfg["instruments"], cfg["family"], cfg["instrument_level"])
    except DataValidationError:
        raise
    except ValueError as err:
        raise ConfigError("instruments", str(err)) from None
    aligned = align(ds, w)
    fit = two_step_estimate(aligned, w, cfg["family"], model, hac_config(cfg), optimizer_config(cfg))
    return ds, aligned, fit


def mc_config(cfg: dict) -> McConfig:
    return McConfig(
        T_grid=tuple(cfg["T_grid"]),
        reps=cfg["reps"],
        forecaster=cfg["forecaster"],
        families=tuple(cfg["families"]),
        timings=tuple(cfg["instrument_timing"]),
        asymmetry=cfg["asymmetry"],
        nominal=cfg["nominal"],
        base_seed=cfg["seed"],
        burn_in=cfg["burn_in"],
        model=cfg["model"],
        recipe=cfg["instruments"],
        params=ArGarchParams(),
        hac=hac_config(cfg),
        optimizer=optimizer_config(cfg),
        workers=cfg["workers"],
    )


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    return str(obj)


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


# --------------------------------------------------------------------------
# commands


def _cmd_estimate(cfg, out: Path) -> str:
    _, _, fit = fit_from_config(cfg)
    _write_json(out / "estimate.json", fit.to_dict())
    lines = [f"{lab} = {th:.6g} (se {se:.3g})"
             for lab, th, se in zip(fit.param_labels, fit.theta, np.sqrt(np.diag(fit.cov)))]
    return "\n".join([f"T_eff = {fit.T_eff}, q = {fit.q}, p = {fit.p}", *lines])


def _cmd_jtest(cfg, out: Path) -> str:
    _, _, fit = fit_from_config(cfg)
    res = j_test(fit)
    _write_json(out / "estimate.json", fit.to_dict())
    _write_json(out / "jtest.json", res.to_dict())
    return f"J = {res.statistic:.6g}, df = {res.df}, p-value = {res.p_value:.4g}"


def _cmd_wald(cfg, out: Path) -> str:
    _, _, fit = fit_from_config(cfg)
    try:
        restriction = builtin_restriction(cfg["restrict"], fit.model)
    except ValueError as err:
        raise ConfigError("restrict", str(err)) from None
    res = wald_test(fit, restriction)
    payload = res.to_dict()
    payload["restriction"] = restriction.name
    _write_json(out / "estimate.json", fit.to_dict())
    _write_json(out / "wald.json", payload)
    return f"Wald ({restriction.name}) = {res.statistic:.6g}, df = {res.df}, p-value = {res.p_value:.4g}"


def _cmd_band(cfg, out: Path) -> str:
    grid = parse_grid(cfg["grid"])
    _, _, fit = fit_from_config(cfg)
    if fit.model.uses_time:
        raise ConfigError("model", "level bands over a state grid need a state-based model")
    band = level_confidence_band(fit, grid, cfg["confidence"])
    with open(out / "band.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("z,level,lower,upper\n")
        for row in zip(band.z_grid, band.level_hat, band.lower, band.upper):
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    _write_json(out / "estimate.json", fit.to_dict())
    return f"{grid.size} grid points, confidence {cfg['confidence']}"


def _cmd_combine(cfg, out: Path) -> str:
    ds, _, fit = fit_from_config(cfg)
    recipe = cfg["sigma_recipe"]
    if recipe == "diff2":
        sigma = sigma_from_differences(ds.y)
    else:
        name = recipe.split(":", 1)[1]
        if name not in ds.extra:
            raise ConfigError("sigma_recipe",
                              f"column {name!r} not loaded; map it with role 'custom'")
        sigma = ds.extra[name]
    series = combine_series(ds, fit.family, fit.model, fit.theta, sigma)
    series.write_csv(out / "densities.csv")
    scores = series.scores()
    _write_json(out / "scores.json", scores)
    _write_json(out / "estimate.json", fit.to_dict())
    norm = scores["normalized"]
    return "\n".join(f"{name}: MSE {s['MSE']:.3f}, MFLL {s['MFLL']:.3f}" for name, s in norm.items())


def _cmd_simulate(cfg, out: Path) -> str:
    if cfg["dgp"] == "ar_garch":
        path = simulate_ar_garch(cfg["T"], ArGarchParams(), cfg["seed"], cfg["burn_in"])
        forecast = full_info_forecast if cfg["forecaster"] == "full" else rigid_info_forecast
        ds = path_dataset(path, forecast(path, cfg["asymmetry"]), 1, {"sigma": path.sigma})
    else:
        ds = asymmetric_info_scenario(cfg["T"], cfg["seed"])
    ds.to_csv(out / "simulated.csv")
    return f"{ds.T} rows written"


def _cmd_mc(cfg, out: Path) -> str:
    try:
        mcfg = mc_config(cfg)
    except ValueError as err:
        raise ConfigError("mc", str(err)) from None
    report = mc_size_power(mcfg)
    report.write_csv(out / "mc.csv")
    report.write_json(out / "mc.json")
    lines = [f"T={r.T:>5} {r.setting:>9} {r.family:>9} {r.role:>5}: "
             f"rate {r.rate:.3f} ({r.failures} failures)" for r in report.rows]
    return "\n".join(lines + report.warnings)


HANDLERS = {
    "estimate": _cmd_estimate,
    "jtest": _cmd_jtest,
    "wald": _cmd_wald,
    "band": _cmd_band,
    "combine": _cmd_combine,
    "simulate": _cmd_simulate,
    "mc": _cmd_mc,
}


def run(argv=None) -> int:
    """Parse ``argv``, run the command and return the exit code."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    out = None
    try:
        file_cfg = _read_config_file(config_path) if config_path else {}
        cfg = resolve_config(command, file_cfg, args)
        out = Path(cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / CONFIG_ECHO, cfg)
        summary = HANDLERS[command](cfg, out)
    except (ConfigError, DataValidationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (EstimationError, np.linalg.LinAlgError) as err:
        diag = {"error": type(err).__name__, "message": str(err),
                "diagnostics": getattr(err, "diagnostics", {})}
        if out is not None:
            _write_json(out / "diagnostics.json", diag)
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(summary)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
