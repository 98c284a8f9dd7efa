"""V-fold cross-validated risk curves and first-minimum size selection."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DataError, SurvivalDataset
from .dsa import CandidateList
from .estimators import PRODUCT_LIMIT, CensoringModel, fit_censoring_model
from .loss import LossSpec, risk
from .partition import PartitionModel

log = logging.getLogger(__name__)

Fitter = Callable[[SurvivalDataset, "CensoringModel | None", LossSpec], CandidateList]


@dataclass(frozen=True)
class CensoringPolicy:
    """How Ḡ is estimated, and whether it is refit inside each training fold.

    A proportional-hazards request on data without any censored subject
    falls back to the product-limit estimator (which is then identically 1).
    """

    kind: str = PRODUCT_LIMIT
    covariates: tuple[str, ...] = ()
    refit_in_folds: bool = True

    def fit(self, data: SurvivalDataset) -> CensoringModel:
        if self.kind != PRODUCT_LIMIT and not np.any(~data.event):
            return fit_censoring_model(data, PRODUCT_LIMIT)
        return fit_censoring_model(data, self.kind, self.covariates)


@dataclass(frozen=True)
class CvCurve:
    sizes: tuple[int, ...]
    cv_risk: tuple[float, ...]
    chosen_size: int
    fold_risks: tuple[tuple[float, ...], ...] = ()

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "cv_risk"])
            for k, r in zip(self.sizes, self.cv_risk):
                w.writerow([k, repr(float(r))])


def first_minimum(cv_risk: Sequence[float]) -> int:
    """Index (0-based) of the first k with risk[k] <= risk[k+1]; last if decreasing."""
    r = list(cv_risk)
    for k in range(len(r) - 1):
        if r[k] <= r[k + 1]:
            return k
    return len(r) - 1


def cross_validate(data: SurvivalDataset, fitter: Fitter, loss: LossSpec, folds: np.ndarray,
                   policy: CensoringPolicy = CensoringPolicy(), max_size: int | None = None,
                   g_full: CensoringModel | None = None) -> CvCurve:
    """Held-out risk per model size averaged over folds.

    Each training fold gets its own censoring model (unless the policy says
    otherwise) used both for fitting and for weighting the held-out fold.
    A size missing from a fold's candidate list is scored with the largest
    available smaller model.
    """
    folds = np.asarray(folds)
    fold_ids = sorted(set(folds.tolist()))
    if not policy.refit_in_folds and g_full is None:
        g_full = policy.fit(data)
    per_fold = []
    for f in fold_ids:
        train = data.subset(np.flatnonzero(folds != f))
        valid = data.subset(np.flatnonzero(folds == f))
        if not np.any(train.event):
            raise DataError(f"training set for fold {f} has no events")
        g = policy.fit(train) if policy.refit_in_folds else g_full
        cands = fitter(train, g, loss)
        per_fold.append((cands, valid, g))
    top = max_size or max(max(c.sizes) for c, _, _ in per_fold)
    sizes = tuple(range(1, top + 1))
    fold_risks = []
    for cands, valid, g in per_fold:
        row, cache = [], {}
        for k in sizes:
            s, model = cands.at_most(k)
            if s not in cache:
                cache[s] = risk(model, valid, g, loss)
            row.append(cache[s])
        fold_risks.append(tuple(row))
    cv = tuple(float(v) for v in np.mean(np.array(fold_risks), axis=0))
    return CvCurve(sizes, cv, sizes[first_minimum(cv)], tuple(fold_risks))


def final_fit(data: SurvivalDataset, chosen_size: int, fitter: Fitter, loss: LossSpec,
              g: CensoringModel | None) -> tuple[PartitionModel, CandidateList]:
    cands = fitter(data, g, loss)
    size, model = cands.at_most(chosen_size)
    if size != chosen_size:
        log.warning("size %d not in the full-data candidate list; using size %d", chosen_size, size)
    return model, cands
