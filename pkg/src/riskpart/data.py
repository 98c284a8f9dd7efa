"""Survival datasets: covariate schema, CSV ingestion and fold assignment."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised when a dataset or input file violates the data contract."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = NUMERIC
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise DataError(f"covariate {self.name!r}: categorical levels must be non-empty")
            if len(set(self.levels)) != len(self.levels):
                raise DataError(f"covariate {self.name!r}: duplicate categorical levels")
        elif self.levels:
            raise DataError(f"covariate {self.name!r}: numeric covariates take no levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Covariate":
        return cls(d["name"], d.get("kind", NUMERIC), tuple(d.get("levels", ())))


@dataclass(frozen=True)
class Subject:
    covariates: tuple
    followup_time: float
    event: bool


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored observations ``(time, event, W)``.

    Covariates live in a float matrix ``x`` of shape ``(n, p)``; categorical
    columns hold integer codes indexing ``Covariate.levels``.  Arrays are
    read-only so a dataset can be shared between folds and worker processes.
    """

    schema: tuple[Covariate, ...]
    x: np.ndarray
    time: np.ndarray
    event: np.ndarray
    _names: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        schema = tuple(self.schema)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, len(schema))
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event).astype(bool)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        n = len(time)
        if x.shape != (n, len(schema)):
            raise DataError(f"covariate matrix has shape {x.shape}, expected {(n, len(schema))}")
        if event.shape != (n,):
            raise DataError("event vector length differs from time vector length")
        if n and not np.all(np.isfinite(time) & (time > 0)):
            bad = int(np.flatnonzero(~(np.isfinite(time) & (time > 0)))[0])
            raise DataError(f"subject {bad}: followup_time must be positive and finite")
        if not np.all(np.isfinite(x)):
            raise DataError("covariate values must be finite (missing values are not imputed)")
        for j, cov in enumerate(schema):
            if cov.is_categorical:
                col = x[:, j]
                if np.any((col != np.round(col)) | (col < 0) | (col >= len(cov.levels))):
                    raise DataError(f"covariate {cov.name!r}: value outside declared levels")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event))
        object.__setattr__(self, "_names", {c: j for j, c in enumerate(names)})

    def __len__(self) -> int:
        return len(self.time)

    def __iter__(self) -> Iterator[Subject]:
        for i in range(len(self)):
            yield self.subject(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SurvivalDataset):
            return NotImplemented
        return (self.schema == other.schema
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.event, other.event))

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column(self, name: str) -> int:
        try:
            return self._names[name]
        except KeyError:
            raise DataError(f"unknown covariate {name!r}") from None

    def subject(self, i: int) -> Subject:
        vals = []
        for j, cov in enumerate(self.schema):
            v = self.x[i, j]
            vals.append(cov.levels[int(v)] if cov.is_categorical else float(v))
        return Subject(tuple(vals), float(self.time[i]), bool(self.event[i]))

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index)
        return SurvivalDataset(self.schema, self.x[index], self.time[index], self.event[index])

    def replace(self, time=None, event=None) -> "SurvivalDataset":
        return SurvivalDataset(
            self.schema,
            self.x,
            self.time if time is None else time,
            self.event if event is None else event,
        )

    def require_events(self) -> None:
        if not np.any(self.event):
            raise DataError("dataset has no subject with event = 1; at least one event is required for fitting")

    @classmethod
    def from_subjects(cls, schema: Sequence[Covariate], subjects: Sequence[Subject]) -> "SurvivalDataset":
        schema = tuple(schema)
        rows = []
        for s in subjects:
            if len(s.covariates) != len(schema):
                raise DataError("covariate vector length differs from schema length")
            rows.append([_encode(cov, v) for cov, v in zip(schema, s.covariates)])
        x = np.array(rows, dtype=float).reshape(len(rows), len(schema))
        return cls(schema, x, [s.followup_time for s in subjects], [s.event for s in subjects])


def _encode(cov: Covariate, value) -> float:
    if cov.is_categorical:
        try:
            return float(cov.levels.index(str(value)))
        except ValueError:
            raise DataError(f"covariate {cov.name!r}: level {value!r} not declared") from None
    return float(value)


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns hold time, event and covariates.

    ``covariates=None`` means every remaining column.  ``categorical`` maps
    covariate names to declared level lists; an empty list asks for levels to
    be inferred (sorted observed labels).  Non-numeric columns that are not
    declared are inferred as categorical.
    """

    time: str = "time"
    event: str = "status"
    covariates: tuple[str, ...] | None = None
    categorical: Mapping[str, Sequence[str]] = field(default_factory=dict)


def load_csv(path, roles: ColumnRoles | None = None) -> SurvivalDataset:
    roles = roles or ColumnRoles()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    for col in (roles.time, roles.event):
        if col not in header:
            raise DataError(f"{path}: column {col!r} not found in header")
    if roles.time == roles.event:
        raise DataError("time and event must be different columns")
    if roles.covariates is None:
        cov_names = [h for h in header if h not in (roles.time, roles.event)]
    else:
        cov_names = list(roles.covariates)
        for c in cov_names:
            if c not in header:
                raise DataError(f"{path}: covariate column {c!r} not found in header")
            if c in (roles.time, roles.event):
                raise DataError(f"column {c!r} cannot be both a covariate and time/event")
    idx = {h: k for k, h in enumerate(header)}

    times, events = [], []
    raw = {c: [] for c in cov_names}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, found {len(row)}")
        cells = [c.strip() for c in row]
        t_raw = cells[idx[roles.time]]
        try:
            t = float(t_raw)
        except ValueError:
            raise DataError(f"row {r}: time value {t_raw!r} is not numeric") from None
        if not (math.isfinite(t) and t > 0):
            raise DataError(f"row {r}: time must be positive (followup_time > 0), got {t_raw!r}")
        e_raw = cells[idx[roles.event]]
        try:
            e = float(e_raw)
        except ValueError:
            e = None
        if e not in (0.0, 1.0):
            raise DataError(f"row {r}: event value outside {{0,1}}: {e_raw!r}")
        times.append(t)
        events.append(e == 1.0)
        for c in cov_names:
            v = cells[idx[c]]
            if v == "" or v.upper() in ("NA", "NAN"):
                raise DataError(f"row {r}: missing value in column {c!r} (imputation is not supported)")
            raw[c].append(v)

    schema, columns = [], []
    for c in cov_names:
        vals = raw[c]
        declared = roles.categorical.get(c)
        numeric = None
        if declared is None:
            try:
                numeric = [float(v) for v in vals]
            except ValueError:
                numeric = None
        if numeric is not None:
            if not all(math.isfinite(v) for v in numeric):
                raise DataError(f"column {c!r}: non-finite numeric value")
            schema.append(Covariate(c))
            columns.append(numeric)
            continue
        levels = tuple(declared) if declared else tuple(sorted(set(vals)))
        cov = Covariate(c, CATEGORICAL, levels)
        codes = []
        for r, v in enumerate(vals, start=1):
            if v not in levels:
                raise DataError(f"row {r}: column {c!r} value {v!r} not among declared levels")
            codes.append(float(levels.index(v)))
        schema.append(cov)
        columns.append(codes)

    x = np.array(columns, dtype=float).T.reshape(len(times), len(schema))
    return SurvivalDataset(tuple(schema), x, times, events)


def write_csv(data: SurvivalDataset, path, time: str = "time", event: str = "status") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.names + [time, event])
        for i in range(data.n):
            row = []
            for j, cov in enumerate(data.schema):
                v = data.x[i, j]
                row.append(cov.levels[int(v)] if cov.is_categorical else repr(float(v)))
            row += [repr(float(data.time[i])), int(data.event[i])]
            w.writerow(row)


def split_folds(data: SurvivalDataset | int, v: int, seed: int) -> np.ndarray:
    """Balanced random assignment of subjects to ``v`` folds.

    Returns an integer array ``fold[i]`` in ``0..v-1``; fold sizes differ by
    at most one.  The same array is meant to be reused across methods.
    """
    n = data if isinstance(data, int) else len(data)
    if not 2 <= v <= n:
        raise DataError(f"number of folds must satisfy 2 <= v <= n (v={v}, n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=int)
    folds[perm] = np.arange(n) % v
    folds.setflags(write=False)
    return folds
