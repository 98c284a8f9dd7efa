"""Independent brute-force references used by unit and acceptance tests."""
import itertools

import numpy as np

from riskpart.partition import INF, Clause, Interval


def weighted_sse(W, Y, mask):
    """Sum over channels of sum_i w (y - weighted mean)^2 inside ``mask``; None if a channel has no weight."""
    total = 0.0
    for k in range(W.shape[1]):
        w, y = W[mask, k], Y[mask, k]
        if w.sum() <= 0:
            return None
        mu = np.sum(w * y) / np.sum(w)
        total += float(np.sum(w * (y - mu) ** 2))
    return total


def _interval(clause, j):
    c = clause.get(j)
    return c if isinstance(c, Interval) else Interval()


def brute_force_numeric_split(x, W, Y, clauses, mb):
    """Exhaustive best split of the region ``clauses`` over numeric covariates.

    Every midpoint between consecutive distinct values inside the region is
    tried.  A split is legal when every clause piece that is geometrically
    nonempty holds at least ``mb`` subjects and both sides carry positive
    weight in every channel.  Returns ``(j, threshold, improvement)`` or None.
    """
    region = np.zeros(x.shape[0], bool)
    clause_masks = [c.mask(x) for c in clauses]
    for m in clause_masks:
        region |= m
    if region.sum() < 2 * mb:
        return None
    parent = weighted_sse(W, Y, region)
    found = []
    for j in range(x.shape[1]):
        vals = np.unique(x[region, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            low = region & (x[:, j] <= thr)
            high = region & (x[:, j] > thr)
            legal = True
            for c, cm in zip(clauses, clause_masks):
                iv = _interval(c, j)
                if thr > iv.lower and np.sum(cm & low) < mb:
                    legal = False
                if thr < iv.upper and np.sum(cm & high) < mb:
                    legal = False
            if not legal:
                continue
            sl, sh = weighted_sse(W, Y, low), weighted_sse(W, Y, high)
            if sl is None or sh is None:
                continue
            found.append((sl + sh, j, thr))
    if not found:
        return None
    best = min(f[0] for f in found)
    tol = 1e-11 * max(float(np.sum(W[region] * Y[region] ** 2)), 1e-300)
    if parent - best <= tol:
        return None
    risk, j, thr = min((f for f in found if f[0] <= best + tol), key=lambda f: (f[1], f[2]))
    return j, thr, parent - risk


def best_subset_split(codes, w, y, mb):
    """Best two-group split of categorical codes by full subset enumeration (single channel)."""
    levels = sorted(set(codes.tolist()))
    best = None
    for r in range(1, len(levels)):
        for left in itertools.combinations(levels, r):
            if levels[0] not in left:
                continue  # each partition once
            low = np.isin(codes, left)
            if low.sum() < mb or (~low).sum() < mb:
                continue
            s = weighted_sse(w[:, None], y[:, None], low) + weighted_sse(w[:, None], y[:, None], ~low)
            if best is None or s < best:
                best = s
    return best


def all_two_region_sse(W, Y, pieces):
    """SSE of every two-group regrouping of ``pieces`` (boolean masks)."""
    out = []
    q = len(pieces)
    for bits in itertools.product((0, 1), repeat=q - 1):
        labels = (0,) + bits
        if all(v == 0 for v in labels):
            continue
        g0 = np.any([p for p, v in zip(pieces, labels) if v == 0], axis=0)
        g1 = np.any([p for p, v in zip(pieces, labels) if v == 1], axis=0)
        out.append((weighted_sse(W, Y, g0) + weighted_sse(W, Y, g1), labels))
    return out



def random_region(rng, p):
    """One box, or a union of two disjoint boxes, over integer covariates 1..10."""
    a, b, c = rng.integers(2, 9, size=3)
    box = Clause(((0, Interval(-INF, a)), (1, Interval(-INF, b))))
    if rng.random() < 0.5:
        return (box,)
    other = Clause(((0, Interval(a, INF)), (2 % p, Interval(c, INF))))
    return (box, other)


def censoring_km_left(time, event, s):
    """Ḡ(s-) from a plain loop over distinct censoring times below ``s``."""
    g = 1.0
    for u in sorted(set(time[~event].tolist())):
        if u >= s:
            break
        at_risk = np.sum(time >= u)
        g *= 1.0 - np.sum((time == u) & ~event) / at_risk
    return g


def brier_three_groups(pred, time, event, t):
    """Censoring-adjusted Brier score at ``t`` by explicit group loop (no ties at ``t``)."""
    total = 0.0
    for p, ti, di in zip(pred, time, event):
        if ti < t and di:
            total += p ** 2 / censoring_km_left(time, event, ti)
        elif ti > t:
            total += (1.0 - p) ** 2 / censoring_km_left(time, event, t)
    return total / len(time)
