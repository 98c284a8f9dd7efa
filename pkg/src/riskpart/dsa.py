"""Deletion/substitution/addition search over partitions of the covariate space.

The search walks through partitions of increasing and decreasing size and
keeps, for each size, the partition with the smallest training risk seen.
Risks are handled internally as weighted sums of squares ("sse"); the
training risk is ``sse / n``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Covariate, DataError, SurvivalDataset
from .estimators import CensoringModel
from .loss import BRIER, LossSpec, loss_channels
from .partition import INF, Clause, Interval, LevelSet, PartitionModel, Region, simplify_clauses

Regions = tuple  # tuple of clause tuples, one per region


@dataclass(frozen=True)
class DsaConfig:
    max_regions: int = 10
    min_per_clause: int = 15
    min_percent_difference: float = 0.05
    max_cuts: int = 200
    max_steps: int = 1000

    def __post_init__(self):
        if self.max_regions < 1:
            raise ValueError("max_regions must be >= 1")
        if self.min_per_clause < 1:
            raise ValueError("min_per_clause must be >= 1")
        if self.min_percent_difference < 0:
            raise ValueError("min_percent_difference must be >= 0")


@dataclass(frozen=True)
class Split:
    """``x_j <= threshold`` (numeric) or ``x_j in left_levels`` goes low."""

    covariate: int
    threshold: float | None = None
    left_levels: frozenset | None = None

    def constraints(self, n_levels: int | None):
        if self.threshold is not None:
            return Interval(-INF, self.threshold), Interval(self.threshold, INF)
        right = frozenset(range(n_levels)) - self.left_levels
        return LevelSet(self.left_levels), LevelSet(right)


@dataclass(frozen=True)
class SplitResult:
    split: Split
    low: tuple[Clause, ...]
    high: tuple[Clause, ...]
    low_stats: np.ndarray
    high_stats: np.ndarray
    sse_after: float
    improvement: float


def sse_of(stats: np.ndarray) -> float:
    """Within-group weighted sum of squares from ``[sum w, sum wy, sum wy^2]``."""
    s0, s1, s2 = stats
    pos = s0 > 0
    val = np.sum(s2[pos] - s1[pos] ** 2 / s0[pos])
    return max(float(val), 0.0)


def _sse_vec(s0, s1, s2) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(s0 > 0, s2 - s1 ** 2 / np.where(s0 > 0, s0, 1.0), 0.0)
    return np.maximum(term.sum(axis=-1), 0.0)


class Workspace:
    """Training data in loss-channel form plus caches shared by the moves."""

    def __init__(self, x: np.ndarray, W: np.ndarray, Y: np.ndarray,
                 schema: Sequence[Covariate], config: DsaConfig):
        self.x = np.asarray(x, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.schema = tuple(schema)
        self.config = config
        self.n = self.x.shape[0]
        self._WY = self.W * self.Y
        self._WYY = self._WY * self.Y
        self._clause_masks: dict = {}
        self._stats: dict = {}
        self._splits: dict = {}

    @classmethod
    def from_data(cls, data: SurvivalDataset, loss: LossSpec, g: CensoringModel | None,
                  config: DsaConfig) -> "Workspace":
        W, Y = loss_channels(data, g, loss)
        return cls(data.x, W, Y, data.schema, config)

    def n_levels(self, j: int) -> int | None:
        cov = self.schema[j]
        return len(cov.levels) if cov.is_categorical else None

    def clause_mask(self, clause: Clause) -> np.ndarray:
        m = self._clause_masks.get(clause)
        if m is None:
            m = clause.mask(self.x)
            self._clause_masks[clause] = m
        return m

    def region_mask(self, clauses) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        for c in clauses:
            m |= self.clause_mask(c)
        return m

    def stats(self, clauses) -> np.ndarray:
        s = self._stats.get(clauses)
        if s is None:
            m = self.region_mask(clauses)
            s = np.stack([self.W[m].sum(axis=0), self._WY[m].sum(axis=0), self._WYY[m].sum(axis=0)])
            self._stats[clauses] = s
        return s

    def sse(self, clauses) -> float:
        return sse_of(self.stats(clauses))

    def total_sse(self, regions: Regions) -> float:
        return float(sum(self.sse(r) for r in regions))

    def _tol(self, stats) -> float:
        return 1e-11 * max(float(np.sum(stats[2])), 1e-300)

    # -- split search --------------------------------------------------
    def best_split(self, clauses, min_count: int | None = None, min_node: int | None = None):
        """Best legal split of the region made of ``clauses`` (cached).

        ``min_count`` is the minimum subjects per resulting clause piece and
        ``min_node`` the minimum region size for attempting a split (both
        default to the config: ``min_per_clause`` and twice that).
        """
        mb = self.config.min_per_clause if min_count is None else min_count
        gate = 2 * mb if min_node is None else max(min_node, 2 * mb)
        key = (clauses, mb, gate)
        if key in self._splits:
            return self._splits[key]
        result = self._best_split(clauses, mb, gate)
        self._splits[key] = result
        return result

    def _best_split(self, clauses, mb: int, gate: int):
        mask = self.region_mask(clauses)
        idx = np.flatnonzero(mask)
        m = idx.size
        if m < gate:
            return None
        Wr, WYr, WYYr = self.W[idx], self._WY[idx], self._WYY[idx]
        tot = self.stats(clauses)
        parent = sse_of(tot)
        tol = self._tol(tot)
        cm = np.stack([self.clause_mask(c)[idx] for c in clauses], axis=1)

        best_risk = None
        cands = []  # (risk, j, key, split)
        for j, cov in enumerate(self.schema):
            xs = self.x[idx, j]
            if cov.is_categorical:
                scan = self._scan_categorical(j, xs, Wr, WYr, WYYr, cm, clauses, tot, mb)
            else:
                scan = self._scan_numeric(j, xs, Wr, WYr, WYYr, cm, clauses, tot, mb)
            for risk, keyval, split in scan:
                cands.append((risk, j, keyval, split))
                if best_risk is None or risk < best_risk:
                    best_risk = risk
        if best_risk is None or parent - best_risk <= tol:
            return None
        tied = [c for c in cands if c[0] <= best_risk + tol]
        risk, j, _, split = min(tied, key=lambda c: (c[1], c[2]))
        low, high = self.apply_split(clauses, split)
        return SplitResult(split, low, high, self.stats(low), self.stats(high),
                           float(risk), float(parent - risk))

    def _legal(self, low_exists, high_exists, low_cnt, high_cnt, L0, H0, mb):
        ok = np.all((~low_exists | (low_cnt >= mb)) & (~high_exists | (high_cnt >= mb)), axis=1)
        return ok & np.all(L0 > 0, axis=1) & np.all(H0 > 0, axis=1)

    def _scan_numeric(self, j, xs, Wr, WYr, WYYr, cm, clauses, tot, mb):
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        pos = np.flatnonzero(xs_s[1:] != xs_s[:-1]) + 1
        if pos.size == 0:
            return []
        if pos.size > self.config.max_cuts:
            targets = np.linspace(0, xs_s.size, self.config.max_cuts + 2)[1:-1]
            pick = np.clip(np.searchsorted(pos, targets), 0, pos.size - 1)
            pos = pos[np.unique(pick)]
        thr = (xs_s[pos - 1] + xs_s[pos]) / 2.0
        c0 = np.cumsum(Wr[order], axis=0)[pos - 1]
        c1 = np.cumsum(WYr[order], axis=0)[pos - 1]
        c2 = np.cumsum(WYYr[order], axis=0)[pos - 1]
        risk = _sse_vec(c0, c1, c2) + _sse_vec(tot[0] - c0, tot[1] - c1, tot[2] - c2)
        low_cnt = np.cumsum(cm[order], axis=0)[pos - 1]
        high_cnt = cm.sum(axis=0) - low_cnt
        lo = np.array([_interval(c.get(j)).lower for c in clauses])
        hi = np.array([_interval(c.get(j)).upper for c in clauses])
        low_exists = thr[:, None] > lo[None, :]
        high_exists = thr[:, None] < hi[None, :]
        legal = self._legal(low_exists, high_exists, low_cnt, high_cnt, c0, tot[0] - c0, mb)
        return [(risk[k], thr[k], Split(j, float(thr[k]))) for k in np.flatnonzero(legal)]

    def _scan_categorical(self, j, xs, Wr, WYr, WYYr, cm, clauses, tot, mb):
        n_levels = self.n_levels(j)
        codes = xs.astype(int)
        observed = np.unique(codes)
        if observed.size < 2:
            return []
        s0 = np.stack([np.bincount(codes, Wr[:, k], n_levels) for k in range(Wr.shape[1])], axis=1)
        s1 = np.stack([np.bincount(codes, WYr[:, k], n_levels) for k in range(Wr.shape[1])], axis=1)
        s2 = np.stack([np.bincount(codes, WYYr[:, k], n_levels) for k in range(Wr.shape[1])], axis=1)
        w_sum = s0[observed].sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = np.where(w_sum > 0, s1[observed].sum(axis=1) / np.where(w_sum > 0, w_sum, 1), np.inf)
        ordered = observed[np.lexsort((observed, mean))]
        c0 = np.cumsum(s0[ordered], axis=0)[:-1]
        c1 = np.cumsum(s1[ordered], axis=0)[:-1]
        c2 = np.cumsum(s2[ordered], axis=0)[:-1]
        risk = _sse_vec(c0, c1, c2) + _sse_vec(tot[0] - c0, tot[1] - c1, tot[2] - c2)
        per_level = np.stack([np.bincount(codes[cm[:, c]], minlength=n_levels) for c in range(cm.shape[1])],
                             axis=1)
        low_cnt = np.cumsum(per_level[ordered], axis=0)[:-1]
        high_cnt = cm.sum(axis=0) - low_cnt
        allowed = [_levels(c.get(j), n_levels) for c in clauses]
        q_count = ordered.size - 1
        low_exists = np.zeros((q_count, len(clauses)), dtype=bool)
        high_exists = np.zeros_like(low_exists)
        for q in range(q_count):
            left = set(ordered[: q + 1].tolist())
            for c, a in enumerate(allowed):
                low_exists[q, c] = bool(a & left)
                high_exists[q, c] = bool(a - left)
        legal = self._legal(low_exists, high_exists, low_cnt, high_cnt, c0, tot[0] - c0, mb)
        return [(risk[q], q + 1, Split(j, None, frozenset(int(v) for v in ordered[: q + 1])))
                for q in np.flatnonzero(legal)]

    def apply_split(self, clauses, split: Split):
        n_levels = self.n_levels(split.covariate)
        lo_con, hi_con = split.constraints(n_levels)
        low, high = [], []
        for c in clauses:
            a = c.restrict(split.covariate, lo_con, n_levels)
            b = c.restrict(split.covariate, hi_con, n_levels)
            if a is not None:
                low.append(a)
            if b is not None:
                high.append(b)
        return simplify_clauses(low, self.schema), simplify_clauses(high, self.schema)

    # -- moves -----------------------------------------------------------
    def addition(self, regions: Regions):
        if len(regions) >= self.config.max_regions:
            return None
        base = [self.sse(r) for r in regions]
        total = sum(base)
        best = None
        for i, r in enumerate(regions):
            bs = self.best_split(r)
            if bs is None:
                continue
            new_total = total - base[i] + bs.sse_after
            if best is None or new_total < best[0]:
                best = (new_total, i, bs)
        if best is None:
            return None
        _, i, bs = best
        return regions[:i] + (bs.low, bs.high) + regions[i + 1:]

    def deletion(self, regions: Regions):
        k = len(regions)
        if k < 2:
            return None
        base = [self.sse(r) for r in regions]
        stats = [self.stats(r) for r in regions]
        best = None
        for a, b in itertools.combinations(range(k), 2):
            delta = sse_of(stats[a] + stats[b]) - base[a] - base[b]
            if best is None or delta < best[0]:
                best = (delta, a, b)
        _, a, b = best
        merged = simplify_clauses(regions[a] + regions[b], self.schema)
        out = list(regions)
        out[a] = merged
        del out[b]
        return tuple(out)

    def substitution(self, regions: Regions):
        k = len(regions)
        if k < 2:
            return None
        base = [self.sse(r) for r in regions]
        total = sum(base)
        best = None
        for a, b in itertools.combinations(range(k), 2):
            for groups in self.recombinations(regions[a], regions[b]):
                g0, g1 = groups
                new_total = total - base[a] - base[b] + self.sse(g0) + self.sse(g1)
                if best is None or new_total < best[0]:
                    best = (new_total, a, b, g0, g1)
        if best is None:
            return None
        _, a, b, g0, g1 = best
        out = list(regions)
        out[a], out[b] = g0, g1
        return tuple(out)

    def recombinations(self, ra, rb):
        """Two-region regroupings of the best-split pieces of ``ra`` and ``rb``.

        With both regions splittable there are four pieces and six regroupings
        besides the original pair; if one region cannot be split it enters as
        a single piece.
        """
        sa, sb = self.best_split(ra), self.best_split(rb)
        pieces = [sa.low, sa.high] if sa is not None else [ra]
        origin = [0] * len(pieces)
        pieces += [sb.low, sb.high] if sb is not None else [rb]
        origin += [1] * (len(pieces) - len(origin))
        q = len(pieces)
        out = []
        for bits in itertools.product((0, 1), repeat=q - 1):
            labels = (0,) + bits
            if all(v == 0 for v in labels) or list(labels) == origin:
                continue
            g0 = simplify_clauses([c for p, v in zip(pieces, labels) if v == 0 for c in p], self.schema)
            g1 = simplify_clauses([c for p, v in zip(pieces, labels) if v == 1 for c in p], self.schema)
            out.append((g0, g1))
        return out

    # -- conversion ------------------------------------------------------
    def to_model(self, regions: Regions, loss: LossSpec) -> PartitionModel:
        out = []
        for r in regions:
            s0, s1, _ = self.stats(r)
            if np.any(s0 <= 0):
                raise DataError("region with zero total weight in a loss channel; cannot fit a prediction")
            p = s1 / s0
            if loss.kind == BRIER:
                p = np.clip(p, 0.0, 1.0)
            out.append(Region(r, tuple(float(v) for v in p)))
        return PartitionModel(self.schema, tuple(out), loss)


def _interval(con) -> Interval:
    return con if isinstance(con, Interval) else Interval()


def _levels(con, n_levels) -> set:
    return set(con.levels) if isinstance(con, LevelSet) else set(range(n_levels))


def regions_of(model: PartitionModel) -> Regions:
    return tuple(tuple(r.clauses) for r in model.regions)


@dataclass(frozen=True)
class CandidateList:
    """Best model found at each size, with its training risk."""

    models: dict = field(default_factory=dict)
    risks: dict = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return sorted(self.models)

    def at_most(self, k: int) -> tuple[int, PartitionModel]:
        avail = [s for s in self.sizes if s <= k]
        if not avail:
            raise KeyError(f"no candidate of size <= {k}")
        return avail[-1], self.models[avail[-1]]

    def to_rows(self) -> list[tuple[int, float]]:
        return [(k, self.risks[k]) for k in self.sizes]


# -- public move API on models --------------------------------------------

def best_split(region_clauses, data: SurvivalDataset, loss: LossSpec, g: CensoringModel | None,
               config: DsaConfig = DsaConfig()) -> tuple[Split, float] | None:
    """Best legal split of one region: ``(split, risk improvement)`` or None."""
    ws = Workspace.from_data(data, loss, g, config)
    res = ws.best_split(tuple(region_clauses))
    return None if res is None else (res.split, res.improvement / ws.n)


def _move(name, model, data, loss, g, config):
    ws = Workspace.from_data(data, loss, g, config)
    new = getattr(ws, name)(regions_of(model))
    return None if new is None else ws.to_model(new, loss)


def addition_move(model, data, loss, g, config: DsaConfig = DsaConfig()):
    return _move("addition", model, data, loss, g, config)


def deletion_move(model, data, loss, g, config: DsaConfig = DsaConfig()):
    if model.size < 2:
        raise ValueError("deletion needs a model with at least two regions")
    return _move("deletion", model, data, loss, g, config)


def substitution_move(model, data, loss, g, config: DsaConfig = DsaConfig()):
    """Best regrouping over all region pairs, if it beats the model by the MPD threshold."""
    if model.size < 2:
        raise ValueError("substitution needs a model with at least two regions")
    ws = Workspace.from_data(data, loss, g, config)
    regions = regions_of(model)
    new = ws.substitution(regions)
    if new is None or not _improves(ws.total_sse(new), ws.total_sse(regions), config.min_percent_difference):
        return None
    return ws.to_model(new, loss)


def _improves(new: float, incumbent: float, mpd: float) -> bool:
    return new < incumbent and new <= (1.0 - mpd) * incumbent


def search(ws: Workspace) -> dict[int, tuple[float, Regions]]:
    """Run the move schedule; return ``{size: (sse, regions)}``."""
    cfg = ws.config
    state: Regions = ((Clause(),),)
    best = {1: (ws.total_sse(state), state)}

    def record(regions):
        k, s = len(regions), ws.total_sse(regions)
        if k not in best or s < best[k][0]:
            best[k] = (s, regions)

    for _ in range(cfg.max_steps):
        k = len(state)
        if k >= 2:
            d = ws.deletion(state)
            if d is not None and _improves(ws.total_sse(d), best[k - 1][0], cfg.min_percent_difference):
                state = d
                record(state)
                continue
            s = ws.substitution(state)
            if s is not None and _improves(ws.total_sse(s), best[k][0], cfg.min_percent_difference):
                state = s
                record(state)
                continue
        a = ws.addition(state)
        if a is not None and ws.total_sse(a) < ws.total_sse(state):
            state = a
            record(state)
            continue
        break

    # enforce non-increasing risk in size; drop sizes that cannot be repaired
    k = 1
    while k + 1 in best:
        if best[k + 1][0] > best[k][0]:
            a = ws.addition(best[k][1])
            if a is not None and ws.total_sse(a) <= best[k][0]:
                best[k + 1] = (ws.total_sse(a), a)
            else:
                for s in [s for s in best if s > k]:
                    del best[s]
                break
        k += 1
    return best


def fit(data: SurvivalDataset, g: CensoringModel | None, loss: LossSpec,
        config: DsaConfig = DsaConfig()) -> CandidateList:
    """Candidate partitions of size 1..max_regions under ``loss``."""
    data.require_events()
    ws = Workspace.from_data(data, loss, g, config)
    root = ((Clause(),),)
    if np.any(ws.stats(root[0])[0] <= 0):
        raise DataError("total loss weight is zero in some channel; nothing to fit")
    best = search(ws)
    models = {k: ws.to_model(r, loss) for k, (s, r) in sorted(best.items())}
    risks = {k: s / ws.n for k, (s, r) in sorted(best.items())}
    return CandidateList(models, risks)
