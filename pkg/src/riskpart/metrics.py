"""Test-set metrics: concordance, prediction error, pairwise similarity, risk curves."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import SurvivalDataset
from .estimators import StepSurvivalCurve, kaplan_meier
from .partition import PartitionModel


@dataclass
class MetricReport:
    size: int
    c_p: float
    c_bar_p: float
    l_p: float = float("nan")
    d_p: float = float("nan")
    variables_used: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"size": self.size, "c_p": self.c_p, "c_bar_p": self.c_bar_p,
                "l_p": self.l_p, "d_p": self.d_p,
                "variables": ";".join(sorted(self.variables_used))}


def _pair_counts(observed: np.ndarray, predicted: np.ndarray) -> tuple[int, int, int]:
    """(concordant, discordant, tied-prediction) counts over pairs with distinct observed values."""
    n = observed.size
    uniq, inv = np.unique(predicted, return_inverse=True)
    if uniq.size <= 64:
        conc = disc = 0
        groups = [np.sort(observed[inv == g]) for g in range(uniq.size)]
        for a in range(uniq.size):
            for b in range(a + 1, uniq.size):
                # pred_a < pred_b: concordant when obs in a < obs in b
                lo, hi = groups[a], groups[b]
                less = np.searchsorted(hi, lo, side="right")
                conc += int(np.sum(hi.size - less))
                disc += int(np.sum(np.searchsorted(hi, lo, side="left")))
        tied = 0
        for grp in groups:
            _, cnt = np.unique(grp, return_counts=True)
            tied += grp.size * (grp.size - 1) // 2 - int(np.sum(cnt * (cnt - 1) // 2))
        return conc, disc, tied
    conc = disc = tied = 0
    for i in range(n - 1):
        do = np.sign(observed[i + 1:] - observed[i])
        dp = np.sign(predicted[i + 1:] - predicted[i])
        use = do != 0
        conc += int(np.sum(use & (do == dp)))
        disc += int(np.sum(use & (dp == -do)))
        tied += int(np.sum(use & (dp == 0)))
    return conc, disc, tied


def concordance(observed, predicted, tied_credit: float = 1.0) -> tuple[float, float]:
    """Return ``(c_p, c_bar_p)``.

    Only pairs with distinct observed outcomes are used.  ``c_p`` ignores
    pairs with tied predictions; the ties-included index gives such pairs
    ``tied_credit`` (1 counts them as concordant), and ``c_bar_p`` is the
    average of the two.
    """
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape or observed.size < 2:
        raise ValueError("observed and predicted must have equal length >= 2")
    conc, disc, tied = _pair_counts(observed, predicted)
    if conc + disc + tied == 0:
        raise ValueError("concordance undefined: all observed outcomes are equal")
    if conc + disc == 0:
        raise ValueError("concordance undefined: every comparable pair has tied predictions")
    c_p = conc / (conc + disc)
    c_tied = (conc + tied_credit * tied) / (conc + disc + tied)
    return c_p, (c_p + c_tied) / 2.0


def _group_means(groups: np.ndarray, values: np.ndarray) -> np.ndarray:
    uniq, inv = np.unique(groups, return_inverse=True)
    sums = np.bincount(inv, weights=values)
    counts = np.bincount(inv)
    return (sums / counts)[inv]


def prediction_error_groups(true_groups, est_groups, outcome) -> float:
    """Mean squared difference between node-mean predictions of two groupings."""
    outcome = np.asarray(outcome, dtype=float)
    a = _group_means(np.asarray(true_groups), outcome)
    b = _group_means(np.asarray(est_groups), outcome)
    return float(np.mean((a - b) ** 2))


def _check_nonempty(model: PartitionModel, groups: np.ndarray, label: str) -> None:
    empty = sorted(set(range(model.size)) - set(np.unique(groups).tolist()))
    if empty:
        raise ValueError(f"{label} model has regions with no test subject: {empty}")


def prediction_error(true_model: PartitionModel, est_model: PartitionModel, test: SurvivalDataset,
                     log_scale: bool = True) -> float:
    """L_p with node values equal to the mean test outcome of co-assigned subjects.

    The outcome is log time by default (the scale the loss works on); pass
    ``log_scale=False`` for raw times.
    """
    tg, eg = true_model.assign_all(test.x), est_model.assign_all(test.x)
    _check_nonempty(true_model, tg, "true")
    _check_nonempty(est_model, eg, "estimated")
    y = np.log(test.time) if log_scale else test.time
    return prediction_error_groups(tg, eg, y)


def _same_pairs(groups: np.ndarray) -> int:
    _, cnt = np.unique(groups, return_counts=True)
    return int(np.sum(cnt * (cnt - 1) // 2))


def pairwise_similarity_groups(true_groups, est_groups) -> float:
    """1 - (pairs on which the two groupings disagree) / C(n, 2)."""
    t = np.asarray(true_groups)
    e = np.asarray(est_groups)
    n = t.size
    if n < 2:
        raise ValueError("pairwise similarity needs at least two subjects")
    _, joint = np.unique(np.stack([t, e], axis=1), axis=0, return_inverse=True)
    both = _same_pairs(joint.ravel())
    disagree = _same_pairs(t) + _same_pairs(e) - 2 * both
    return 1.0 - disagree / (n * (n - 1) / 2)


def pairwise_similarity(true_model: PartitionModel, est_model: PartitionModel, test: SurvivalDataset) -> float:
    return pairwise_similarity_groups(true_model.assign_all(test.x), est_model.assign_all(test.x))


def region_curves(model: PartitionModel, test: SurvivalDataset) -> list[StepSurvivalCurve]:
    """Kaplan-Meier curve per region, ordered by increasing mean test time.

    Regions with no test subject are skipped.
    """
    groups = model.assign_all(test.x)
    out = []
    for k in range(model.size):
        m = groups == k
        if m.any():
            out.append((float(test.time[m].mean()), k, kaplan_meier(test.time[m], test.event[m])))
    return [c for _, _, c in sorted(out, key=lambda t: (t[0], t[1]))]


@dataclass(frozen=True)
class StratificationBands:
    grid: np.ndarray
    n_groups: int
    n_replicates: int
    mean: np.ndarray    # (n_groups, len(grid))
    lower: np.ndarray
    upper: np.ndarray


def stratification_bands(replicates: Sequence[Sequence[StepSurvivalCurve]], grid,
                         n_groups: int, quantiles=(0.025, 0.975)) -> StratificationBands:
    """Pointwise mean and percentile bands for replicates with ``n_groups`` curves.

    Curves are aligned by rank (ordering by mean outcome, as returned by
    :func:`region_curves`).
    """
    grid = np.asarray(grid, dtype=float)
    chosen = [r for r in replicates if len(r) == n_groups]
    if not chosen:
        raise ValueError(f"no replicate has {n_groups} risk groups")
    vals = np.array([[c(grid) for c in rep] for rep in chosen])  # (R, G, T)
    lo, hi = np.quantile(vals, quantiles, axis=0)
    return StratificationBands(grid, n_groups, len(chosen), vals.mean(axis=0), lo, hi)


def stratification_curves(model: PartitionModel, test: SurvivalDataset, time_grid,
                          replicates: Sequence[Sequence[StepSurvivalCurve]] = ()):
    """Region curves for ``model`` on ``test`` plus bands over ``replicates``.

    The current model's curves are included in the band computation.
    """
    curves = region_curves(model, test)
    bands = stratification_bands(list(replicates) + [curves], time_grid, len(curves))
    return curves, bands
