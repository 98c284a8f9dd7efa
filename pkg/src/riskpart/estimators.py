"""Product-limit and proportional-hazards estimators, truncation and IPCW weights."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError, SurvivalDataset

#: Censoring-survival evaluations at or below this value are refused.
WEIGHT_FLOOR = 1e-8

PRODUCT_LIMIT = "product-limit"
PROPORTIONAL_HAZARDS = "proportional-hazards"
_KIND_ALIASES = {
    "km": PRODUCT_LIMIT,
    "kaplan-meier": PRODUCT_LIMIT,
    PRODUCT_LIMIT: PRODUCT_LIMIT,
    "cox": PROPORTIONAL_HAZARDS,
    "ph": PROPORTIONAL_HAZARDS,
    PROPORTIONAL_HAZARDS: PROPORTIONAL_HAZARDS,
}


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class StepSurvivalCurve:
    """Right-continuous step function equal to 1 before the first jump."""

    jump_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("jump_times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        if np.any(np.diff(v) > 1e-15) or np.any((v < 0) | (v > 1)):
            raise ValueError("survival values must be non-increasing and lie in [0, 1]")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        """S(t), right-continuous."""
        k = np.searchsorted(self.jump_times, t, side="right")
        return np.concatenate(([1.0], self.values))[k]

    def left(self, t):
        """S(t-), the left limit."""
        k = np.searchsorted(self.jump_times, t, side="left")
        return np.concatenate(([1.0], self.values))[k]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "survival"])
            for t, v in zip(self.jump_times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


def kaplan_meier(times, events) -> StepSurvivalCurve:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if times.size == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    if times.shape != events.shape:
        raise ValueError("times and events differ in length")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    uniq, inv = np.unique(times, return_inverse=True)
    deaths = np.bincount(inv, weights=events.astype(float), minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    at_risk = counts[::-1].cumsum()[::-1]
    jump = deaths > 0
    factors = 1.0 - deaths[jump] / at_risk[jump]
    values = np.clip(np.cumprod(factors), 0.0, 1.0)
    return StepSurvivalCurve(uniq[jump], values)


@dataclass(frozen=True, eq=False)
class CensoringModel:
    """Estimate of P(C >= t | w).

    For the proportional-hazards kind ``baseline`` is the Breslow baseline
    survival at the covariate means, and ``coefficients`` act on centred
    covariates taken from ``covariates`` (column names).
    """

    kind: str
    baseline: StepSurvivalCurve
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    covariates: tuple[str, ...] = ()
    means: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cumhaz_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cumhaz: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def _linear_predictor(self, x, schema_names) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [schema_names.index(c) for c in self.covariates]
        return (x[:, cols] - self.means) @ self.coefficients

    def evaluate(self, t, x=None, schema_names: Sequence[str] | None = None, left: bool = True):
        """Ḡ(t|w) (or Ḡ(t-|w) with ``left``), vectorised over subjects.

        ``x`` rows are covariate vectors in the dataset schema order; they
        are ignored by the product-limit kind.
        """
        t = np.asarray(t, dtype=float)
        if self.kind == PRODUCT_LIMIT:
            return self.baseline.left(t) if left else self.baseline(t)
        if x is None or schema_names is None:
            raise ValueError("proportional-hazards censoring model needs covariates")
        side = "left" if left else "right"
        k = np.searchsorted(self.cumhaz_times, t, side=side)
        lam = np.concatenate(([0.0], self.cumhaz))[k]
        eta = self._linear_predictor(x, list(schema_names))
        return np.exp(-lam * np.exp(eta))

    def at_followup(self, data: SurvivalDataset, times=None) -> np.ndarray:
        """Ḡ(t_i-|w_i) for each subject, at its own time unless ``times`` given."""
        t = data.time if times is None else np.asarray(times, dtype=float)
        if self.kind == PRODUCT_LIMIT:
            return self.baseline.left(t)
        return self.evaluate(t, data.x, data.names, left=True)


def _cox_terms(beta, x, order_time, first, event):
    eta = x @ beta
    shift = eta.max() if eta.size else 0.0
    r = np.exp(eta - shift)
    # reverse cumulative sums give risk-set totals; ``first`` indexes the
    # first subject of each tie group so tied events share one risk set
    s0 = r[::-1].cumsum()[::-1][first]
    s1 = (r[:, None] * x)[::-1].cumsum(axis=0)[::-1][first]
    s2 = (r[:, None, None] * x[:, :, None] * x[:, None, :])[::-1].cumsum(axis=0)[::-1][first]
    e = event
    loglik = float(np.sum(eta[e] - shift - np.log(s0[e])))
    mean = s1[e] / s0[e, None]
    grad = x[e].sum(axis=0) - mean.sum(axis=0)
    info = (s2[e] / s0[e, None, None]).sum(axis=0) - np.einsum("ki,kj->ij", mean, mean)
    return loglik, grad, info


def cox_partial_loglik(beta, times, events, x) -> float:
    """Breslow partial log-likelihood (no centring, no sorting assumptions)."""
    order = np.argsort(times, kind="stable")
    t = np.asarray(times, dtype=float)[order]
    xx = np.asarray(x, dtype=float)[order].reshape(len(t), -1)
    first = np.searchsorted(t, t, side="left")
    return _cox_terms(np.asarray(beta, dtype=float), xx, t, first, np.asarray(events, bool)[order])[0]


def fit_cox(times, events, x, max_iter: int = 50, tol: float = 1e-8):
    """Newton-Raphson for the Cox model with Breslow ties.

    Returns ``(beta, means, cumhaz_times, cumhaz)`` where the Breslow
    cumulative baseline hazard refers to covariates centred at ``means``.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    x = np.asarray(x, dtype=float).reshape(len(times), -1)
    means = x.mean(axis=0)
    order = np.argsort(times, kind="stable")
    t = times[order]
    xc = (x - means)[order]
    e = events[order]
    first = np.searchsorted(t, t, side="left")

    beta = np.zeros(x.shape[1])
    loglik, grad, info = _cox_terms(beta, xc, t, first, e)
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            break
        step = np.linalg.lstsq(info, grad, rcond=None)[0]
        # a Newton step at rounding level means the score cannot shrink further
        if np.linalg.norm(step) < 1e-12 * (1.0 + np.linalg.norm(beta)):
            break
        for _halving in range(40):
            ll, g, inf = _cox_terms(beta + step, xc, t, first, e)
            if ll >= loglik - 1e-12 * abs(loglik):
                break
            step = step / 2
        else:
            raise ConvergenceError("Cox fit: step-halving failed to increase the partial likelihood")
        beta, loglik, grad, info = beta + step, ll, g, inf
    else:
        if np.linalg.norm(grad) >= tol:
            raise ConvergenceError(f"Cox fit did not converge in {max_iter} Newton steps")

    r = np.exp(xc @ beta)
    s0 = r[::-1].cumsum()[::-1]
    uniq, d = np.unique(t[e], return_counts=True)
    starts = np.searchsorted(t, uniq, side="left")
    cumhaz = np.cumsum(d / s0[starts])
    return beta, means, uniq, cumhaz


def fit_censoring_model(data: SurvivalDataset, kind: str = PRODUCT_LIMIT,
                        covariates: Sequence[str] = ()) -> CensoringModel:
    """Fit Ḡ(t|w) = P(C >= t | w) treating ``event == 0`` as the outcome."""
    try:
        kind = _KIND_ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown censoring model kind {kind!r}") from None
    censored = ~data.event
    if kind == PRODUCT_LIMIT:
        return CensoringModel(PRODUCT_LIMIT, kaplan_meier(data.time, censored))
    covariates = tuple(covariates)
    if not covariates:
        raise ValueError("proportional-hazards censoring model needs a non-empty covariate subset")
    if not np.any(censored):
        raise DataError("no censored subjects: the proportional-hazards censoring model is degenerate; "
                        "use the product-limit kind")
    cols = [data.column(c) for c in covariates]
    beta, means, ht, h = fit_cox(data.time, censored, data.x[:, cols])
    base = StepSurvivalCurve(ht, np.exp(-h)) if len(ht) else StepSurvivalCurve(np.zeros(0), np.zeros(0))
    return CensoringModel(PROPORTIONAL_HAZARDS, base, beta, covariates, means, ht, h)


@dataclass(frozen=True)
class TruncationResult:
    tau: float
    dataset: SurvivalDataset
    n_clamped: int


def truncate(data: SurvivalDataset, exceed_fraction: float = 0.05) -> TruncationResult:
    """Clamp follow-up times above a sample quantile and mark them as events.

    ``tau`` is the ``ceil((1 - f) n)``-th order statistic, so
    ``floor(f n)`` times exceed it when there are no ties.
    """
    n = data.n
    if not 0 < exceed_fraction < 1 or exceed_fraction * n < 1 - 1e-12:
        raise ValueError(f"truncation needs 0 < fraction < 1 and fraction*n >= 1 (got {exceed_fraction}, n={n})")
    k = n - math.floor(exceed_fraction * n + 1e-9)
    tau = float(np.sort(data.time)[k - 1])
    over = data.time > tau
    if not np.any(over):
        return TruncationResult(tau, data, 0)
    time = np.where(over, tau, data.time)
    event = np.where(over, True, data.event)
    return TruncationResult(tau, data.replace(time=time, event=event), int(over.sum()))


def ipcw_weights(data: SurvivalDataset, g: CensoringModel, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Δ_i / Ḡ(T̃_i-|w_i); censored subjects get weight zero."""
    gval = g.at_followup(data)
    bad = data.event & (gval <= floor)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"censoring survival estimate {gval[i]:.3g} at subject {i} (time {data.time[i]:g}) "
                        f"is below the floor {floor:g}; truncate follow-up times first")
    w = np.zeros(data.n)
    w[data.event] = 1.0 / gval[data.event]
    return w
