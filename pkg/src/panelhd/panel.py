"""Balanced-panel data model, CSV ingestion, demeaning and standardization.

A :class:`PanelDataset` stores the response ``y[i, t]`` and regressors
``x[i, t, j]`` of a balanced N x T panel as dense arrays.  The stacked design
matrix flattens (i, t) as ``i * T + t``, i.e. unit-major with time running
fastest, which is the order the penalized solvers expect.

Datasets are immutable after construction; every transform returns a new
dataset and appends its name to ``transform_log``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AlreadyTransformed,
    DimensionMismatch,
    DuplicateKey,
    NonNumericCell,
    UnbalancedPanel,
    ZeroVariance,
)

TRANSFORM_NONE = "none"
TRANSFORM_DEMEANED = "time_demeaned"
TRANSFORM_STANDARDIZED = "standardized"


@dataclass(frozen=True)
class ColumnSchema:
    """Names of the key columns in an input CSV.

    ``x_names=None`` means "every column that is not unit/time/y is a
    regressor", in file order.
    """

    unit: str = "unit"
    time: str = "time"
    y: str = "y"
    x_names: tuple[str, ...] | None = None


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel of one response and ``d`` regressors.

    Attributes
    ----------
    y : ndarray, shape (N, T)
    x : ndarray, shape (N, T, d)
    unit_ids, time_ids : labels in storage order (sorted on load).
    x_names : regressor column names.
    transform_log : transforms applied so far, starting with ``"none"``.
    """

    y: np.ndarray
    x: np.ndarray
    unit_ids: tuple = ()
    time_ids: tuple = ()
    x_names: tuple[str, ...] = ()
    transform_log: tuple[str, ...] = (TRANSFORM_NONE,)

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if y.ndim != 2 or x.ndim != 3 or x.shape[:2] != y.shape:
            raise DimensionMismatch(
                f"y has shape {y.shape}, x has shape {x.shape}; expected (N, T) and (N, T, d)"
            )
        if y.shape[0] < 2 or y.shape[1] < 2 or x.shape[2] < 1:
            raise DimensionMismatch("need N >= 2, T >= 2 and d >= 1")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise NonNumericCell("panel contains non-finite values")
        y.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if not self.unit_ids:
            object.__setattr__(self, "unit_ids", tuple(range(y.shape[0])))
        if not self.time_ids:
            object.__setattr__(self, "time_ids", tuple(range(y.shape[1])))
        if not self.x_names:
            object.__setattr__(
                self, "x_names", tuple(f"x{j + 1}" for j in range(x.shape[2]))
            )
        if len(self.unit_ids) != y.shape[0] or len(self.time_ids) != y.shape[1]:
            raise DimensionMismatch("unit/time labels do not match array shapes")
        if len(self.x_names) != x.shape[2]:
            raise DimensionMismatch("x_names does not match the number of regressors")

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_regressors(self) -> int:
        return self.x.shape[2]

    def design_matrix(self) -> np.ndarray:
        """Stacked (N*T, d) design with (i, t) flattened as i*T + t."""
        n, t, d = self.x.shape
        return self.x.reshape(n * t, d)

    def response_vector(self) -> np.ndarray:
        """Stacked (N*T,) response in the same order as :meth:`design_matrix`."""
        return self.y.reshape(-1)

    def data_hash(self) -> str:
        """Content hash used to tie serialized fits to their source data."""
        h = hashlib.sha256()
        h.update(np.asarray(self.y.shape, dtype=np.int64).tobytes())
        h.update(np.asarray(self.x.shape, dtype=np.int64).tobytes())
        h.update(self.y.tobytes())
        h.update(self.x.tobytes())
        h.update(";".join(map(str, self.x_names)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ScaleRecord:
    """Original pooled means and SDs of y and each regressor.

    Lets coefficients and intervals estimated on standardized data be mapped
    back to the original units: beta_raw_j = beta_std_j * sd_y / sd_xj, with
    the intercept correction implied by the stored means.
    """

    y_mean: float
    y_sd: float
    x_means: np.ndarray
    x_sds: np.ndarray
    x_names: tuple[str, ...] = ()

    def coef_to_raw(self, beta_std: np.ndarray) -> np.ndarray:
        beta_std = np.asarray(beta_std, dtype=np.float64)
        return beta_std * self.y_sd / self.x_sds

    def coef_to_std(self, beta_raw: np.ndarray) -> np.ndarray:
        beta_raw = np.asarray(beta_raw, dtype=np.float64)
        return beta_raw * self.x_sds / self.y_sd

    def intercept_to_raw(self, beta_std: np.ndarray) -> float:
        """Intercept of the raw-units fit implied by a standardized fit."""
        beta_raw = self.coef_to_raw(beta_std)
        return float(self.y_mean - beta_raw @ self.x_means)

    def to_json(self) -> str:
        rows = [{"name": "y", "mean": self.y_mean, "sd": self.y_sd}]
        names = self.x_names or tuple(f"x{j + 1}" for j in range(len(self.x_means)))
        for name, m, s in zip(names, self.x_means, self.x_sds):
            rows.append({"name": str(name), "mean": float(m), "sd": float(s)})
        return json.dumps(rows, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScaleRecord":
        rows = json.loads(text)
        y_row = rows[0]
        if y_row["name"] != "y":
            raise DimensionMismatch("first ScaleRecord row must be the response")
        x_rows = rows[1:]
        return cls(
            y_mean=float(y_row["mean"]),
            y_sd=float(y_row["sd"]),
            x_means=np.array([r["mean"] for r in x_rows], dtype=np.float64),
            x_sds=np.array([r["sd"] for r in x_rows], dtype=np.float64),
            x_names=tuple(r["name"] for r in x_rows),
        )


def _parse_float(raw: str, line_no: int, col: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise NonNumericCell(f"line {line_no}: column {col!r} has value {raw!r}") from None
    if not np.isfinite(value):
        raise NonNumericCell(f"line {line_no}: column {col!r} is not finite")
    return value


def load_csv(path, schema: ColumnSchema = ColumnSchema()) -> PanelDataset:
    """Read a balanced panel from a UTF-8 CSV with a header row.

    Rows may appear in any order; the dataset is sorted by (unit, time).
    Raises :class:`UnbalancedPanel` if any (unit, time) cell is missing,
    :class:`DuplicateKey` on repeated cells and :class:`NonNumericCell` on
    unparseable values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UnbalancedPanel(f"{path}: empty file")
        header = list(reader.fieldnames)
        for col in (schema.unit, schema.time, schema.y):
            if col not in header:
                raise NonNumericCell(f"{path}: missing required column {col!r}")
        if schema.x_names is None:
            x_names = tuple(
                c for c in header if c not in (schema.unit, schema.time, schema.y)
            )
        else:
            x_names = tuple(schema.x_names)
            for col in x_names:
                if col not in header:
                    raise NonNumericCell(f"{path}: missing regressor column {col!r}")
        if not x_names:
            raise NonNumericCell(f"{path}: no regressor columns found")

        cells: dict[tuple, tuple] = {}
        for line_no, row in enumerate(reader, start=2):
            key = (row[schema.unit], row[schema.time])
            if key in cells:
                raise DuplicateKey(f"line {line_no}: duplicate cell {key}")
            y_val = _parse_float(row[schema.y], line_no, schema.y)
            x_vals = tuple(_parse_float(row[c], line_no, c) for c in x_names)
            cells[key] = (y_val, x_vals)

    units = sorted({k[0] for k in cells}, key=_label_key)
    times = sorted({k[1] for k in cells}, key=_label_key)
    n, t = len(units), len(times)
    if n * t != len(cells):
        missing = [(u, s) for u in units for s in times if (u, s) not in cells]
        raise UnbalancedPanel(
            f"{path}: {len(missing)} missing cell(s), e.g. {missing[0]}"
        )
    d = len(x_names)
    y = np.empty((n, t))
    x = np.empty((n, t, d))
    for i, u in enumerate(units):
        for s, tm in enumerate(times):
            y_val, x_vals = cells[(u, tm)]
            y[i, s] = y_val
            x[i, s, :] = x_vals
    return PanelDataset(
        y=y,
        x=x,
        unit_ids=tuple(_coerce_label(u) for u in units),
        time_ids=tuple(_coerce_label(tm) for tm in times),
        x_names=x_names,
    )


def _label_key(raw: str):
    try:
        return (0, float(raw), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(raw))


def _coerce_label(raw: str):
    try:
        f = float(raw)
    except (TypeError, ValueError):
        return raw
    return int(f) if f == int(f) else f


def write_csv(ds: PanelDataset, path) -> None:
    """Write a dataset back to CSV in the canonical sorted order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "time", "y", *ds.x_names])
        for i, u in enumerate(ds.unit_ids):
            for s, tm in enumerate(ds.time_ids):
                writer.writerow(
                    [u, tm, repr(float(ds.y[i, s])), *(repr(float(v)) for v in ds.x[i, s, :])]
                )


def demean_time(ds: PanelDataset) -> PanelDataset:
    """Remove each unit's time mean from y and every regressor.

    This is the fixed-effects transform: an additive unit effect alpha_i is
    constant over t and is removed exactly.
    """
    if TRANSFORM_DEMEANED in ds.transform_log:
        raise AlreadyTransformed("dataset is already time-demeaned")
    y = ds.y - ds.y.mean(axis=1, keepdims=True)
    x = ds.x - ds.x.mean(axis=1, keepdims=True)
    return replace(ds, y=y, x=x, transform_log=ds.transform_log + (TRANSFORM_DEMEANED,))


def standardize(ds: PanelDataset) -> tuple[PanelDataset, ScaleRecord]:
    """Scale y and each regressor to pooled mean 0 and variance 1.

    Means and SDs are pooled over all (i, t).  Raises :class:`ZeroVariance`
    on a constant column.
    """
    if TRANSFORM_STANDARDIZED in ds.transform_log:
        raise AlreadyTransformed("dataset is already standardized")
    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std())
    if y_sd <= 0.0:
        raise ZeroVariance("y")
    x_flat = ds.x.reshape(-1, ds.n_regressors)
    x_means = x_flat.mean(axis=0)
    x_sds = x_flat.std(axis=0)
    for j, s in enumerate(x_sds):
        if s <= 0.0:
            raise ZeroVariance(ds.x_names[j])
    y = (ds.y - y_mean) / y_sd
    x = (ds.x - x_means) / x_sds
    record = ScaleRecord(
        y_mean=y_mean, y_sd=y_sd, x_means=x_means, x_sds=x_sds, x_names=ds.x_names
    )
    out = replace(
        ds, y=y, x=x, transform_log=ds.transform_log + (TRANSFORM_STANDARDIZED,)
    )
    return out, record


def unstandardize(ds: PanelDataset, record: ScaleRecord) -> PanelDataset:
    """Invert :func:`standardize` using the stored means and SDs."""
    if TRANSFORM_STANDARDIZED not in ds.transform_log:
        raise AlreadyTransformed("dataset is not standardized")
    y = ds.y * record.y_sd + record.y_mean
    x = ds.x * record.x_sds + record.x_means
    log = tuple(t for t in ds.transform_log if t != TRANSFORM_STANDARDIZED)
    return replace(ds, y=y, x=x, transform_log=log)
