"""Forecast datasets, CSV ingestion and instrument construction."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataValidationError
from .functionals import FunctionalFamily, identification

ROLES = ("t", "y", "x", "z")
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class ForecastDataset:
    """Aligned realizations ``y``, point forecasts ``x`` and state ``z``.

    ``extra`` holds additional numeric columns addressable by instrument
    recipes (``custom:<name>``) or carried along for validation.
    """

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = {}
        for name in ROLES:
            arrays[name] = np.array(getattr(self, name), dtype=float).ravel()
        extra = {k: np.array(v, dtype=float).ravel() for k, v in self.extra.items()}
        T = arrays["y"].size
        for name, arr in [*arrays.items(), *extra.items()]:
            if arr.size != T:
                raise DataValidationError(
                    f"column {name!r} has length {arr.size}, expected {T}", column=name
                )
        if T < 2:
            raise DataValidationError(f"need at least 2 observations, got {T}")
        for name in ROLES:
            bad = np.flatnonzero(~np.isfinite(arrays[name]))
            if bad.size:
                raise DataValidationError(
                    f"missing or non-finite value in column {name!r} at row {bad[0]}",
                    row=int(bad[0]),
                    column=name,
                )
        t = arrays["t"]
        if np.any(t != np.round(t)):
            raise DataValidationError("time index must be integer valued", column="t")
        steps = np.diff(t)
        if np.any(steps <= 0):
            row = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise DataValidationError(
                f"time index must be strictly increasing (row {row})", row=row, column="t"
            )
        for name, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for arr in extra.values():
            arr.flags.writeable = False
        object.__setattr__(self, "extra", extra)

    @property
    def T(self) -> int:
        return self.y.size

    def __len__(self):
        return self.T

    @property
    def forecast_error(self) -> np.ndarray:
        """``e_t = x_t - y_t``."""
        return self.x - self.y

    def rows(self, start: int = 0, stop: int | None = None) -> "ForecastDataset":
        sl = slice(start, stop)
        return ForecastDataset(
            self.t[sl], self.y[sl], self.x[sl], self.z[sl],
            {k: v[sl] for k, v in self.extra.items()},
        )

    def with_state(self, z) -> "ForecastDataset":
        return ForecastDataset(self.t, self.y, self.x, z, self.extra)

    def with_lagged_realization_state(self, lag: int = 1) -> "ForecastDataset":
        """Use ``z_t = y_{t-lag}`` as state; the first ``lag`` rows are dropped."""
        if lag < 1 or lag > self.T - 2:
            raise DataValidationError(f"state lag must lie in [1, {self.T - 2}], got {lag}")
        z = np.concatenate([np.full(lag, np.nan), self.y[:-lag]])
        extra = dict(self.extra)
        return ForecastDataset(self.t[lag:], self.y[lag:], self.x[lag:], z[lag:],
                               {k: v[lag:] for k, v in extra.items()})

    def to_csv(self, path) -> None:
        names = list(ROLES) + list(self.extra)
        cols = [self.t, self.y, self.x, self.z, *self.extra.values()]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for i in range(self.T):
                row = [str(int(self.t[i]))]
                row += [FLOAT_FORMAT % c[i] for c in cols[1:]]
                writer.writerow(row)


def load_csv(path, columns: dict[str, str] | None = None,
             state_lag: int | None = None) -> ForecastDataset:
    """Read a dataset from a headed, comma-separated UTF-8 file.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    columns : dict, optional
        Map from CSV column name to role (``t``, ``y``, ``x``, ``z`` or
        ``custom``). Custom columns are kept in ``extra`` under their CSV
        name. By default, columns literally named ``t``, ``y``, ``x``, ``z``
        are used and every other column is ignored.
    state_lag : int, optional
        If given, the state is ``y`` lagged by this many rows instead of a
        ``z`` column; the first ``state_lag`` rows are dropped.

    Raises
    ------
    DataValidationError
        Missing column, non-numeric or empty cell (row and column named),
        ragged rows, or a dataset violating the invariants.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"data file {str(path)!r} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"data file {str(path)!r} is empty") from None
        records = [r for r in reader if r]

    if columns is None:
        columns = {name: name for name in header if name in ROLES}
    roles: dict[str, str] = {}
    custom: list[str] = []
    for name, role in columns.items():
        if name not in header:
            raise DataValidationError(f"column {name!r} not found in {str(path)!r}", column=name)
        if role == "custom":
            custom.append(name)
        elif role in ROLES:
            if role in roles:
                raise DataValidationError(f"role {role!r} mapped twice", column=name)
            roles[role] = name
        else:
            raise DataValidationError(f"unknown role {role!r} for column {name!r}", column=name)
    for role in ("y", "x"):
        if role not in roles:
            raise DataValidationError(f"no column mapped to required role {role!r}", column=role)
    if "z" not in roles and state_lag is None:
        raise DataValidationError(
            "no column mapped to the state role 'z' (map one or set a state lag)", column="z"
        )

    index = {name: i for i, name in enumerate(header)}
    wanted = list(roles.values()) + custom
    parsed = {name: np.empty(len(records)) for name in wanted}
    for r, record in enumerate(records):
        line = r + 2  # 1-based file line, header is line 1
        if len(record) != len(header):
            raise DataValidationError(
                f"line {line} has {len(record)} fields, header has {len(header)}", row=line
            )
        for name in wanted:
            cell = record[index[name]].strip()
            try:
                parsed[name][r] = float(cell)
            except ValueError:
                raise DataValidationError(
                    f"non-numeric value {cell!r} in column {name!r} at line {line}",
                    row=line, column=name,
                ) from None

    T = len(records)
    t = parsed[roles["t"]] if "t" in roles else np.arange(1, T + 1, dtype=float)
    z = parsed[roles["z"]] if "z" in roles else np.zeros(T)
    ds = ForecastDataset(t, parsed[roles["y"]], parsed[roles["x"]], z,
                         {name: parsed[name] for name in custom})
    if state_lag is not None:
        ds = ds.with_lagged_realization_state(state_lag)
    return ds


# --------------------------------------------------------------------------
# instruments

TERM_KINDS = (
    "constant", "forecast", "realization", "state", "forecast_error",
    "squared_forecast_error", "identification_value", "custom",
)


@dataclass(frozen=True)
class InstrumentTerm:
    kind: str
    lag: int = 0
    negate: bool = False
    name: str | None = None  # column name for custom terms

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown instrument term {self.kind!r}")
        if self.lag < 0:
            raise ValueError("instrument lags must be non-negative")
        if self.kind == "custom" and not self.name:
            raise ValueError("custom instrument terms need a column name")

    @property
    def label(self) -> str:
        base = f"custom:{self.name}" if self.kind == "custom" else self.kind
        if self.kind != "constant":
            base += f"[t-{self.lag}]" if self.lag else "[t]"
        return ("-" if self.negate else "") + base


@dataclass(frozen=True)
class InstrumentRecipe:
    terms: tuple[InstrumentTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("an instrument recipe needs at least one term")

    @property
    def max_lag(self) -> int:
        return max(term.lag for term in self.terms)

    def lagged(self, by: int = 1) -> "InstrumentRecipe":
        """Shift every non-constant term ``by`` further periods into the past."""
        return InstrumentRecipe(tuple(
            term if term.kind == "constant"
            else InstrumentTerm(term.kind, term.lag + by, term.negate, term.name)
            for term in self.terms
        ))

    def __str__(self):
        parts = []
        for term in self.terms:
            s = ("-" if term.negate else "")
            s += f"custom:{term.name}" if term.kind == "custom" else term.kind
            if term.lag:
                s += f"@{term.lag}"
            parts.append(s)
        return ",".join(parts)


_TERM_RE = re.compile(r"^(-?)([a-z_]+)(?::([^@]+))?(?:@(\d+))?$")

PRESETS = {
    # constant, x_t, y_{t-1} - x_{t-1}, V(x_{t-1}, y_{t-1})
    "gdp": "constant,forecast,-forecast_error@1,identification_value@1",
    # constant, x_t, e_{t-1}, e_{t-1}^2 and one further lag of the non-constant terms
    "rationality": ("constant,forecast,forecast_error@1,squared_forecast_error@1,"
                    "forecast@1,forecast_error@2,squared_forecast_error@2"),
}


def parse_recipe(text: str) -> InstrumentRecipe:
    """Parse ``"constant,forecast,-forecast_error@1,custom:spread@2"`` or a preset name.

    A leading ``-`` flips the sign of a term, ``@k`` lags it by ``k`` periods.
    Presets: ``gdp``, ``rationality`` and ``rationality_lagged``.
    """
    text = text.strip()
    if text == "rationality_lagged":
        return parse_recipe(PRESETS["rationality"]).lagged(1)
    if text in PRESETS:
        text = PRESETS[text]
    terms = []
    for raw in text.split(","):
        raw = raw.strip()
        m = _TERM_RE.match(raw)
        if not m:
            raise ValueError(f"cannot parse instrument term {raw!r}")
        neg, kind, name, lag = m.groups()
        terms.append(InstrumentTerm(kind, int(lag or 0), bool(neg), name))
    return InstrumentRecipe(tuple(terms))


@dataclass(frozen=True)
class InstrumentMatrix:
    """Instruments ``w`` aligned with rows ``start, start+1, ...`` of a dataset."""

    w: np.ndarray
    labels: tuple[str, ...]
    start: int = 0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or w.shape[1] == 0:
            raise ValueError("instrument matrix must be T x q with q >= 1")
        if len(self.labels) != w.shape[1]:
            raise ValueError("one label per instrument column is required")
        if not np.all(np.isfinite(w)):
            raise DataValidationError("instrument columns must be finite")
        zero = np.flatnonzero(~np.any(w != 0.0, axis=0))
        if zero.size:
            raise DataValidationError(
                f"instrument column {self.labels[zero[0]]!r} is identically zero",
                column=self.labels[zero[0]],
            )
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def q(self) -> int:
        return self.w.shape[1]

    @property
    def T_eff(self) -> int:
        return self.w.shape[0]

    def tail(self, n: int) -> "InstrumentMatrix":
        """Keep the last ``n`` rows."""
        if n > self.T_eff:
            raise ValueError(f"cannot keep {n} rows of {self.T_eff}")
        return InstrumentMatrix(self.w[self.T_eff - n:], self.labels,
                                self.start + self.T_eff - n)


def align(ds: ForecastDataset, w: InstrumentMatrix) -> ForecastDataset:
    """Rows of ``ds`` matching the instrument rows (``ds`` may be the full dataset)."""
    if ds.T == w.T_eff:
        return ds
    if ds.T == w.start + w.T_eff:
        return ds.rows(w.start)
    raise ValueError(
        f"dataset with {ds.T} rows does not match instruments with {w.T_eff} rows "
        f"starting at row {w.start}"
    )


def _term_series(ds: ForecastDataset, term: InstrumentTerm, family, level) -> np.ndarray:
    kind = term.kind
    if kind == "constant":
        return np.ones(ds.T)
    if kind == "forecast":
        return ds.x
    if kind == "realization":
        return ds.y
    if kind == "state":
        return ds.z
    if kind == "forecast_error":
        return ds.forecast_error
    if kind == "squared_forecast_error":
        return np.square(ds.forecast_error)
    if kind == "identification_value":
        if family is None:
            raise ValueError("identification_value instruments need a functional family")
        return np.asarray(identification(family, ds.x, ds.y, level), dtype=float) * np.ones(ds.T)
    if term.name not in ds.extra:
        raise DataValidationError(f"custom instrument column {term.name!r} not in dataset",
                                  column=term.name)
    return ds.extra[term.name]


def build_instruments(ds: ForecastDataset, recipe: InstrumentRecipe | str,
                      family: FunctionalFamily | str | None = None,
                      level=0.5) -> InstrumentMatrix:
    """Evaluate an instrument recipe on a dataset.

    Row ``i`` of the result belongs to dataset row ``start + i`` and only uses
    data up to that row; ``start`` is the largest lag in the recipe.

    ``level`` is the level at which ``identification_value`` terms evaluate
    the identification function, either a scalar or one value per row.
    """
    if isinstance(recipe, str):
        recipe = parse_recipe(recipe)
    if family is not None:
        family = FunctionalFamily.parse(family)
    start = recipe.max_lag
    if start > ds.T - 2:
        raise DataValidationError(f"instrument lag {start} exceeds T - 2 = {ds.T - 2}")
    cols = []
    for term in recipe.terms:
        series = _term_series(ds, term, family, level)
        col = series[start - term.lag: ds.T - term.lag]
        cols.append(-col if term.negate else col)
    return InstrumentMatrix(np.column_stack(cols), tuple(t.label for t in recipe.terms), start)
