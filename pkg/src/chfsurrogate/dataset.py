"""Tabular critical-heat-flux data: ingestion, validation, scaling, splitting.

Column layout is fixed (units are part of the header name)::

    D_m, L_m, P_kPa, G_kgm2s, Tin_C, X_out, dHin_kJkg, CHF_kWm2

The first seven columns are the thermal-hydraulic conditions, the last is the
regression target.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import Rng

COLUMNS = ("D_m", "L_m", "P_kPa", "G_kgm2s", "Tin_C", "X_out", "dHin_kJkg", "CHF_kWm2")
CONDITION_COLUMNS = COLUMNS[:7]
TARGET_COLUMN = COLUMNS[7]
N_CONDITIONS = 7


class DataError(ValueError):
    """Base class for everything wrong with input data."""


class SchemaError(DataError):
    pass


class RowError(DataError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


@dataclass(frozen=True)
class ChfRecord:
    diameter_m: float
    heated_length_m: float
    pressure_kpa: float
    mass_flux: float
    inlet_temp_c: float
    outlet_quality: float
    inlet_enthalpy: float
    chf: float

    def __post_init__(self):
        problem = _record_problem(np.array(self.as_tuple(), dtype=np.float64))
        if problem:
            raise DataError(problem)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, f.name)) for f in fields(self))


def _record_problem(row: np.ndarray) -> str | None:
    for name, v in zip(COLUMNS, row):
        if not math.isfinite(v):
            return f"{name} is not finite ({v!r})"
    d, length, p, g = row[0], row[1], row[2], row[3]
    if d <= 0:
        return f"D_m must be > 0, got {d!r}"
    if length <= 0:
        return f"L_m must be > 0, got {length!r}"
    if p <= 0:
        return f"P_kPa must be > 0, got {p!r}"
    if g < 0:
        return f"G_kgm2s must be >= 0, got {g!r}"
    if row[7] <= 0:
        return f"CHF_kWm2 must be > 0, got {row[7]!r}"
    return None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable (n, 8) table of CHF records in ``COLUMNS`` order."""

    values: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] != len(COLUMNS):
            raise SchemaError(f"expected an (n, {len(COLUMNS)}) table, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise DataError("dataset is empty")
        for i, row in enumerate(arr):
            problem = _record_problem(row)
            if problem:
                raise RowError(i + 1, problem)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_records(cls, records: Iterable[ChfRecord], source_tag: str = "") -> "Dataset":
        rows = [r.as_tuple() for r in records]
        if not rows:
            raise DataError("dataset is empty")
        return cls(np.array(rows, dtype=np.float64), source_tag)

    @property
    def records(self) -> list[ChfRecord]:
        return [ChfRecord(*map(float, row)) for row in self.values]

    @property
    def conditions(self) -> np.ndarray:
        return self.values[:, :N_CONDITIONS]

    @property
    def chf(self) -> np.ndarray:
        return self.values[:, N_CONDITIONS]

    def __len__(self) -> int:
        return self.values.shape[0]

    def subset(self, indices: Sequence[int], source_tag: str | None = None) -> "Dataset":
        tag = self.source_tag if source_tag is None else source_tag
        return Dataset(self.values[np.asarray(indices, dtype=np.intp)], tag)

    def equals(self, other: "Dataset") -> bool:
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))


def load_chf_csv(path: str | Path) -> Dataset:
    """Read a CHF table. Columns are matched by header name, order is free.

    Lines starting with ``#`` and blank lines are ignored. Any invalid row
    aborts the load; row numbers in errors count data rows from 1.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: file is empty")

    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    col_idx = [header.index(c) for c in COLUMNS]

    rows = []
    for row_no, cells in enumerate(reader, start=1):
        if len(cells) != len(header):
            raise RowError(row_no, f"expected {len(header)} cells, found {len(cells)}")
        vals = []
        for name, j in zip(COLUMNS, col_idx):
            text = cells[j].strip()
            try:
                v = float(text)
            except ValueError:
                raise RowError(row_no, f"{name} is not numeric ({text!r})") from None
            vals.append(v)
        row = np.array(vals)
        problem = _record_problem(row)
        if problem:
            raise RowError(row_no, problem)
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: header but no data rows")
    return Dataset(np.vstack(rows), source_tag=str(path))


def write_chf_csv(data: Dataset, path: str | Path) -> None:
    # repr() gives the shortest string that round-trips a float exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in data.values:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True, eq=False)
class ScalerParams:
    """Per-column z-score statistics (population std) for all 8 columns."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.std, dtype=np.float64)
        if mean.shape != (len(COLUMNS),) or std.shape != (len(COLUMNS),):
            raise SchemaError("scaler needs exactly 8 means and 8 stds")
        if not np.all(std > 0):
            bad = [COLUMNS[i] for i in np.flatnonzero(~(std > 0))]
            raise DataError(f"scaler std must be > 0 for {', '.join(bad)}")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def transform(self, table: np.ndarray) -> np.ndarray:
        return (np.asarray(table, dtype=np.float64) - self.mean) / self.std

    def inverse(self, table: np.ndarray) -> np.ndarray:
        return np.asarray(table, dtype=np.float64) * self.std + self.mean

    def transform_conditions(self, c: np.ndarray) -> np.ndarray:
        return (np.asarray(c, dtype=np.float64) - self.mean[:N_CONDITIONS]) / self.std[:N_CONDITIONS]

    def transform_chf(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean[N_CONDITIONS]) / self.std[N_CONDITIONS]

    def inverse_chf(self, y):
        return np.asarray(y, dtype=np.float64) * self.std[N_CONDITIONS] + self.mean[N_CONDITIONS]

    def to_dict(self) -> dict:
        return {"columns": list(COLUMNS), "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std], "std_convention": "population"}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))

    def equals(self, other: "ScalerParams") -> bool:
        return bool(np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std))


def fit_scaler(table: np.ndarray | Dataset) -> ScalerParams:
    arr = table.values if isinstance(table, Dataset) else np.asarray(table, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty table")
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    for name, m, s in zip(COLUMNS, mean, std):
        if not s > 1e-12 * max(1.0, abs(m)):
            raise DataError(f"column {name} has zero variance")
    return ScalerParams(mean, std)


def standardize(data: Dataset | np.ndarray) -> tuple[np.ndarray, ScalerParams]:
    scaler = fit_scaler(data)
    arr = data.values if isinstance(data, Dataset) else data
    return scaler.transform(arr), scaler


def destandardize(table: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    return scaler.inverse(table)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    shuffle_seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not f > 0 for f in fr):
            raise ValueError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)!r}")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    # tiny epsilon keeps e.g. 24580 * 0.1 from flooring to 2457 on representation noise
    n_val = int(math.floor(n * spec.val_fraction + 1e-9))
    n_test = int(math.floor(n * spec.test_fraction + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    n_train, n_val, _ = split_sizes(n, spec)
    perm = Rng(spec.shuffle_seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(len(data), spec)
    return data.subset(tr), data.subset(va), data.subset(te)


# Synthetic oracle.  chf = A * sqrt(G) * (1 + B*P/10000) * (1 - X) * exp(-L/C) + E * dHin
SYNTH_A = 30.0
SYNTH_B = 0.5
SYNTH_C = 4.0
SYNTH_E = 0.5
SYNTH_RANGES = {
    "D_m": (0.003, 0.02),
    "L_m": (0.5, 4.0),
    "P_kPa": (1000.0, 16000.0),
    "G_kgm2s": (500.0, 5000.0),
    "Tin_C": (20.0, 300.0),
    "X_out": (-0.3, 0.5),
    "dHin_kJkg": (10.0, 800.0),
}
MAX_SYNTH_NOISE = 0.1


def synthetic_chf_formula(conditions: np.ndarray) -> np.ndarray:
    c = np.asarray(conditions, dtype=np.float64)
    L, P, G, X, dh = c[..., 1], c[..., 2], c[..., 3], c[..., 5], c[..., 6]
    return SYNTH_A * np.sqrt(G) * (1.0 + SYNTH_B * P / 10000.0) * (1.0 - X) * np.exp(-L / SYNTH_C) + SYNTH_E * dh


def synthetic_chf(n: int, seed: int, noise: float = 0.0) -> Dataset:
    """Draw ``n`` conditions uniformly from ``SYNTH_RANGES`` and label them.

    ``noise`` is a relative Gaussian perturbation of the target
    (chf * (1 + noise * N(0, 1))), capped at ``MAX_SYNTH_NOISE``.
    """
    if n < 1:
        raise DataError("synthetic dataset needs n >= 1")
    if not 0.0 <= noise <= MAX_SYNTH_NOISE:
        raise ValueError(f"noise must lie in [0, {MAX_SYNTH_NOISE}]")
    rng = Rng(seed)
    lo = np.array([SYNTH_RANGES[c][0] for c in CONDITION_COLUMNS])
    hi = np.array([SYNTH_RANGES[c][1] for c in CONDITION_COLUMNS])
    cond = lo + (hi - lo) * rng.uniform(size=(n, N_CONDITIONS))
    chf = synthetic_chf_formula(cond)
    if noise > 0:
        chf = chf * (1.0 + noise * rng.normal(size=n))
    return Dataset(np.column_stack([cond, chf]), source_tag=f"synthetic(n={n}, seed={seed}, noise={noise})")
