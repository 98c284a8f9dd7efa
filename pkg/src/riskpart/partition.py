"""Piecewise-constant models over unions of axis-aligned boxes.

A model is an ordered list of regions.  Each region is an "or" of clauses
and each clause an "and" of per-covariate constraints: a half-open interval
``(lower, upper]`` for numeric covariates or a level subset for categorical
ones.  Regions are disjoint and cover the whole covariate space; every move
in the search re-partitions existing regions, so this holds by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import Covariate, DataError, SurvivalDataset
from .estimators import CensoringModel, ipcw_weights
from .loss import BRIER, LossSpec, loss_channels

INF = math.inf


@dataclass(frozen=True)
class Interval:
    """``lower < x <= upper``."""

    lower: float = -INF
    upper: float = INF

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"empty interval ({self.lower}, {self.upper}]")

    def mask(self, col: np.ndarray) -> np.ndarray:
        return (col > self.lower) & (col <= self.upper)

    def intersect(self, other: "Interval") -> "Interval | None":
        lo, hi = max(self.lower, other.lower), min(self.upper, other.upper)
        return Interval(lo, hi) if lo < hi else None

    @property
    def unbounded(self) -> bool:
        return self.lower == -INF and self.upper == INF


@dataclass(frozen=True)
class LevelSet:
    """Membership in a set of categorical level codes."""

    levels: frozenset

    def __post_init__(self):
        if not self.levels:
            raise ValueError("empty level set")

    def mask(self, col: np.ndarray) -> np.ndarray:
        return np.isin(col, sorted(self.levels))

    def intersect(self, other: "LevelSet") -> "LevelSet | None":
        common = self.levels & other.levels
        return LevelSet(frozenset(common)) if common else None


Constraint = Union[Interval, LevelSet]


@dataclass(frozen=True)
class Clause:
    """Conjunction of constraints keyed by covariate column index.

    Unconstrained covariates are omitted; the empty clause is the whole space.
    """

    constraints: tuple[tuple[int, Constraint], ...] = ()

    def get(self, j: int) -> Constraint | None:
        for k, c in self.constraints:
            if k == j:
                return c
        return None

    def mask(self, x: np.ndarray) -> np.ndarray:
        m = np.ones(x.shape[0], dtype=bool)
        for j, c in self.constraints:
            m &= c.mask(x[:, j])
        return m

    def restrict(self, j: int, constraint: Constraint, n_levels: int | None = None) -> "Clause | None":
        """Intersection with a constraint on covariate ``j``; None if empty."""
        current = self.get(j)
        new = constraint if current is None else current.intersect(constraint)
        if new is None:
            return None
        rest = [(k, c) for k, c in self.constraints if k != j]
        if not _trivial(new, n_levels):
            rest.append((j, new))
        return Clause(tuple(sorted(rest, key=lambda kc: kc[0])))

    def variables(self) -> set[int]:
        return {j for j, _ in self.constraints}


def _trivial(c: Constraint, n_levels: int | None) -> bool:
    if isinstance(c, Interval):
        return c.unbounded
    return n_levels is not None and len(c.levels) == n_levels


def _merge_pair(a: Clause, b: Clause, schema: Sequence[Covariate]) -> Clause | None:
    """Union of two disjoint clauses when it is again a single box."""
    keys = {j for j, _ in a.constraints} | {j for j, _ in b.constraints}
    differing = [j for j in keys if a.get(j) != b.get(j)]
    if len(differing) != 1:
        return None
    j = differing[0]
    ca, cb = a.get(j), b.get(j)
    if ca is None or cb is None:
        return None
    if isinstance(ca, Interval) and isinstance(cb, Interval):
        if ca.upper == cb.lower:
            merged = Interval(ca.lower, cb.upper)
        elif cb.upper == ca.lower:
            merged = Interval(cb.lower, ca.upper)
        else:
            return None
    elif isinstance(ca, LevelSet) and isinstance(cb, LevelSet):
        merged = LevelSet(ca.levels | cb.levels)
    else:
        return None
    rest = [(k, c) for k, c in a.constraints if k != j]
    n_levels = len(schema[j].levels) if schema[j].is_categorical else None
    if not _trivial(merged, n_levels):
        rest.append((j, merged))
    return Clause(tuple(sorted(rest, key=lambda kc: kc[0])))


def simplify_clauses(clauses: Sequence[Clause], schema: Sequence[Covariate]) -> tuple[Clause, ...]:
    """Merge adjacent boxes until no pair combines into a single box."""
    out = list(clauses)
    merged = True
    while merged:
        merged = False
        for a in range(len(out)):
            for b in range(a + 1, len(out)):
                m = _merge_pair(out[a], out[b], schema)
                if m is not None:
                    out[a] = m
                    del out[b]
                    merged = True
                    break
            if merged:
                break
    return tuple(sorted(out, key=_clause_key))


def _clause_key(c: Clause):
    key = []
    for j, con in c.constraints:
        if isinstance(con, Interval):
            key.append((j, 0, con.lower, con.upper))
        else:
            key.append((j, 1, tuple(sorted(con.levels)), ()))
    return tuple(key)


@dataclass(frozen=True)
class Region:
    clauses: tuple[Clause, ...]
    predictions: tuple[float, ...] = ()
    mean_time: float | None = None

    def mask(self, x: np.ndarray) -> np.ndarray:
        m = np.zeros(x.shape[0], dtype=bool)
        for c in self.clauses:
            m |= c.mask(x)
        return m

    def variables(self) -> set[int]:
        out: set[int] = set()
        for c in self.clauses:
            out |= c.variables()
        return out


class AssignmentError(RuntimeError):
    """A covariate vector fell in zero or several regions (broken invariant)."""


@dataclass(frozen=True)
class PartitionModel:
    schema: tuple[Covariate, ...]
    regions: tuple[Region, ...]
    loss: LossSpec = field(default_factory=LossSpec)

    @classmethod
    def root(cls, schema: Sequence[Covariate], prediction=(), loss: LossSpec | None = None) -> "PartitionModel":
        if np.isscalar(prediction):
            prediction = (float(prediction),)
        return cls(tuple(schema), (Region((Clause(),), tuple(prediction)),), loss or LossSpec())

    @property
    def size(self) -> int:
        return len(self.regions)

    @property
    def times(self) -> tuple[float, ...]:
        return self.loss.times if self.loss.kind == BRIER else ()

    def membership(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([r.mask(x) for r in self.regions], axis=1)

    def assign_all(self, x) -> np.ndarray:
        m = self.membership(x)
        counts = m.sum(axis=1)
        if np.any(counts != 1):
            i = int(np.flatnonzero(counts != 1)[0])
            raise AssignmentError(f"row {i} falls in {counts[i]} regions")
        return m.argmax(axis=1)

    def assign(self, w) -> int:
        return int(self.assign_all(np.asarray(w, dtype=float)[None, :])[0])

    def prediction_matrix(self) -> np.ndarray:
        if any(not r.predictions for r in self.regions):
            raise ValueError("model has regions without predictions; refit first")
        return np.array([r.predictions for r in self.regions], dtype=float)

    def predict_all(self, x) -> np.ndarray:
        """Predictions per row; shape ``(n,)`` for one channel else ``(n, K)``."""
        P = self.prediction_matrix()[self.assign_all(x)]
        return P[:, 0] if P.shape[1] == 1 else P

    def predict(self, w):
        p = self.prediction_matrix()[self.assign(w)]
        return float(p[0]) if p.size == 1 else p

    def variables_used(self) -> list[str]:
        used: set[int] = set()
        for r in self.regions:
            used |= r.variables()
        return [self.schema[j].name for j in sorted(used)]

    def with_regions(self, regions) -> "PartitionModel":
        return replace(self, regions=tuple(regions))

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": [c.to_dict() for c in self.schema],
            "loss": self.loss.to_dict(),
            "regions": [_region_to_dict(r, self.schema) for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionModel":
        schema = tuple(Covariate.from_dict(c) for c in d["schema"])
        names = {c.name: j for j, c in enumerate(schema)}
        regions = tuple(_region_from_dict(r, schema, names) for r in d["regions"])
        return cls(schema, regions, LossSpec.from_dict(d["loss"]))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "PartitionModel":
        p = Path(source) if not str(source).lstrip().startswith("{") else None
        text = p.read_text(encoding="utf-8") if p is not None else str(source)
        return cls.from_dict(json.loads(text))


def _bound(v: float):
    return None if math.isinf(v) else v


def _region_to_dict(r: Region, schema) -> dict:
    clauses = []
    for c in r.clauses:
        cd = {}
        for j, con in c.constraints:
            cov = schema[j]
            if isinstance(con, Interval):
                cd[cov.name] = {"lower": _bound(con.lower), "upper": _bound(con.upper)}
            else:
                cd[cov.name] = {"levels": [cov.levels[k] for k in sorted(con.levels)]}
        clauses.append(cd)
    d = {"clauses": clauses, "predictions": list(r.predictions)}
    if r.mean_time is not None:
        d["mean_time"] = r.mean_time
    return d


def _region_from_dict(d: dict, schema, names) -> Region:
    clauses = []
    for cd in d["clauses"]:
        cons = []
        for name, spec in cd.items():
            if name not in names:
                raise DataError(f"model refers to unknown covariate {name!r}")
            j = names[name]
            if "levels" in spec:
                levels = schema[j].levels
                cons.append((j, LevelSet(frozenset(levels.index(v) for v in spec["levels"]))))
            else:
                lo = -INF if spec.get("lower") is None else float(spec["lower"])
                hi = INF if spec.get("upper") is None else float(spec["upper"])
                cons.append((j, Interval(lo, hi)))
        clauses.append(Clause(tuple(sorted(cons, key=lambda kc: kc[0]))))
    mt = d.get("mean_time")
    return Region(tuple(clauses), tuple(float(v) for v in d.get("predictions", ())),
                  None if mt is None else float(mt))


# -- fitting helpers -----------------------------------------------------

def region_means(masks: np.ndarray, W: np.ndarray, Y: np.ndarray, clip: bool = False) -> np.ndarray:
    """Weighted mean of each channel within each region (rows of ``masks``)."""
    s0 = masks.astype(float) @ W
    s1 = masks.astype(float) @ (W * Y)
    bad = np.argwhere(s0 <= 0)
    if bad.size:
        r, k = bad[0]
        raise DataError(f"region {r} has zero total weight in loss channel {k}; cannot fit a prediction")
    P = s1 / s0
    return np.clip(P, 0.0, 1.0) if clip else P


def refit_predictions(model: PartitionModel, data: SurvivalDataset, loss: LossSpec,
                      g: CensoringModel | None) -> PartitionModel:
    """Set each region's prediction to the loss-minimising constant(s)."""
    W, Y = loss_channels(data, g, loss)
    masks = model.membership(data.x).T
    P = region_means(masks, W, Y, clip=loss.kind == BRIER)
    regions = [replace(r, predictions=tuple(float(v) for v in p)) for r, p in zip(model.regions, P)]
    return replace(model, regions=tuple(regions), loss=loss)


def attach_mean_times(model: PartitionModel, data: SurvivalDataset, g: CensoringModel | None) -> PartitionModel:
    """Store the IPCW-weighted mean follow-up time of each region.

    These serve as the per-region predicted survival time used for
    concordance, independently of the loss the model was fitted with.
    A region without weighted events falls back to its plain mean time.
    """
    w = ipcw_weights(data, g) if g is not None else data.event.astype(float)
    members = model.membership(data.x)
    regions = []
    for k, r in enumerate(model.regions):
        m = members[:, k]
        sw = w[m].sum()
        if sw > 0:
            mt = float(np.sum(w[m] * data.time[m]) / sw)
        elif m.any():
            mt = float(data.time[m].mean())
        else:
            mt = float(np.sum(w * data.time) / w.sum())
        regions.append(replace(r, mean_time=mt))
    return replace(model, regions=tuple(regions))


# -- rendering -----------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:g}"


def describe_constraint(cov: Covariate, con: Constraint) -> str:
    if isinstance(con, LevelSet):
        return "{" + ",".join(cov.levels[k] for k in sorted(con.levels)) + "}"
    if con.lower == -INF:
        return f"<= {_fmt(con.upper)}"
    if con.upper == INF:
        return f"> {_fmt(con.lower)}"
    return f"({_fmt(con.lower)}, {_fmt(con.upper)}]"


def render_table(model: PartitionModel, data: SurvivalDataset | None = None) -> str:
    """Plain-text risk table: one row per clause, grouped by region."""
    used = sorted({j for r in model.regions for j in r.variables()})
    headers = ["group", "n", "prediction", "mean time"] + [model.schema[j].name for j in used]
    counts = model.membership(data.x).sum(axis=0) if data is not None else [None] * model.size
    order = sorted(range(model.size), key=lambda k: (
        -(model.regions[k].mean_time if model.regions[k].mean_time is not None else 0.0), k))
    rows = []
    for rank, k in enumerate(order, start=1):
        r = model.regions[k]
        pred = ", ".join(f"{v:.4g}" for v in r.predictions) if r.predictions else "-"
        for ci, c in enumerate(r.clauses):
            first = ci == 0
            cells = [
                str(rank) if first else "or",
                (str(int(counts[k])) if counts[k] is not None else "-") if first else "",
                pred if first else "",
                (f"{r.mean_time:.4g}" if r.mean_time is not None else "-") if first else "",
            ]
            for j in used:
                con = c.get(j)
                cells.append(describe_constraint(model.schema[j], con) if con is not None else "")
            rows.append(cells)
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    line = lambda cells: "  ".join(s.ljust(w) for s, w in zip(cells, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])] + [line(r) for r in rows]
    return "\n".join(out) + "\n"
