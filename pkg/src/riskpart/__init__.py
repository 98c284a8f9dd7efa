"""Censoring-aware piecewise-constant risk stratification.

Partitions are searched with deletion/substitution/addition moves under an
inverse-probability-of-censoring weighted L2 loss or a (composite) Brier
loss, with a greedy tree as a baseline and cross-validated size selection.
"""
from .data import ColumnRoles, Covariate, DataError, SurvivalDataset, load_csv, split_folds, write_csv
from .estimators import CensoringModel, StepSurvivalCurve, fit_censoring_model, kaplan_meier, truncate
from .loss import LossSpec, brier_risk, ipcw_l2_risk, risk
from .metrics import MetricReport, concordance, pairwise_similarity, prediction_error
from .partition import Clause, Interval, LevelSet, PartitionModel, Region
from .selection import CensoringPolicy, cross_validate, final_fit

__version__ = "0.1.0"

__all__ = [
    "CensoringModel", "CensoringPolicy", "Clause", "ColumnRoles", "Covariate", "DataError", "Interval",
    "LevelSet", "LossSpec", "MetricReport", "PartitionModel", "Region", "StepSurvivalCurve",
    "SurvivalDataset", "brier_risk", "concordance", "cross_validate", "final_fit", "fit_censoring_model",
    "ipcw_l2_risk", "kaplan_meier", "load_csv", "pairwise_similarity", "prediction_error", "risk",
    "split_folds", "truncate", "write_csv",
]
