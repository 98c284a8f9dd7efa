"""Full-data and censoring-adjusted squared-error losses.

Every loss used for fitting reduces to a sum of weighted L2 "channels":
``(1/n) sum_k sum_i W[i, k] * (Y[i, k] - psi_k(w_i))**2``.  IPCW-L2 has a
single channel (weights Δ/Ḡ, outcome log-time); a Brier grid contributes one
channel per time point with the composite weight folded into ``W``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DataError, SurvivalDataset
from .estimators import WEIGHT_FLOOR, CensoringModel, ipcw_weights, kaplan_meier

FULL_L2 = "full-l2"
IPCW_L2 = "ipcw-l2"
BRIER = "brier"

LOG_TIME = "log-time"
RAW_TIME = "raw-time"

#: survival levels used by the five-km grid
KM_GRID_LEVELS = (0.85, 0.70, 0.55, 0.40, 0.25)


@dataclass(frozen=True)
class LossSpec:
    kind: str = IPCW_L2
    scale: str = LOG_TIME
    times: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (FULL_L2, IPCW_L2, BRIER):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.scale not in (LOG_TIME, RAW_TIME):
            raise ValueError(f"unknown time scale {self.scale!r}")
        if self.kind == BRIER:
            t = np.asarray(self.times, dtype=float)
            if t.size == 0 or np.any(np.diff(t) <= 0) or np.any(t <= 0):
                raise ValueError("Brier times must be positive and strictly increasing")
            if len(self.weights) != len(self.times):
                raise ValueError("Brier weights must match the number of times")
            if any(w < 0 for w in self.weights):
                raise ValueError("Brier weights must be nonnegative")

    @classmethod
    def ipcw_l2(cls, scale: str = LOG_TIME) -> "LossSpec":
        return cls(IPCW_L2, scale)

    @classmethod
    def brier(cls, times: Sequence[float], weights: Sequence[float] | None = None) -> "LossSpec":
        times = tuple(float(t) for t in times)
        if weights is None:
            weights = composite_weights(times)
        return cls(BRIER, LOG_TIME, times, tuple(float(w) for w in weights))

    @property
    def n_channels(self) -> int:
        return len(self.times) if self.kind == BRIER else 1

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == BRIER:
            d["times"] = list(self.times)
            d["weights"] = list(self.weights)
        else:
            d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d) -> "LossSpec":
        if d["kind"] == BRIER:
            return cls.brier(d["times"], d.get("weights"))
        return cls(d["kind"], d.get("scale", LOG_TIME))


def composite_weights(times: Sequence[float]) -> tuple[float, ...]:
    """|t_r / t_p| with t_p the last grid time."""
    t = np.asarray(times, dtype=float)
    return tuple(float(v) for v in np.abs(t / t[-1]))


def time_outcome(time, scale: str = LOG_TIME) -> np.ndarray:
    time = np.asarray(time, dtype=float)
    return np.log(time) if scale == LOG_TIME else time.copy()


@dataclass(frozen=True)
class BrierTransform:
    """Modified time/indicator pair for survival status at ``t``.

    A subject whose follow-up ends exactly at ``t`` without an event is
    counted as still at risk, matching ``Δ(t) = I{min(T, t) <= C}``.
    """

    t: float

    def at_risk(self, time, event) -> np.ndarray:
        time = np.asarray(time, dtype=float)
        return (time > self.t) | ((time == self.t) & ~np.asarray(event, bool))

    def __call__(self, time, event):
        """Return ``(T̃(t), Δ(t), Z(t))``."""
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, bool)
        z = self.at_risk(time, event)
        return np.minimum(time, self.t), z | event, z.astype(float)


def empirical_risk_l2(predictions, outcomes, weights=None) -> float:
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.ones_like(outcomes) if weights is None else np.asarray(weights, dtype=float)
    if not (predictions.shape == outcomes.shape == weights.shape):
        raise ValueError("predictions, outcomes and weights must have equal lengths")
    if outcomes.size == 0:
        raise ValueError("empty input")
    return float(np.sum(weights * (outcomes - predictions) ** 2) / outcomes.size)


def _check_floor(gval, used, floor, where):
    bad = used & (gval <= floor)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"censoring survival estimate {gval[i]:.3g} below floor {floor:g} "
                        f"for subject {i} {where}; truncate follow-up times first")


def brier_channel(data: SurvivalDataset, g: CensoringModel, t: float,
                  floor: float = WEIGHT_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """IPCW weights and binary outcomes ``Z(t)`` for one evaluation time."""
    tt, dt, z = BrierTransform(t)(data.time, data.event)
    gval = g.at_followup(data, tt)
    _check_floor(gval, dt, floor, f"at t={t:g}")
    w = np.zeros(data.n)
    w[dt] = 1.0 / gval[dt]
    return w, z


def loss_channels(data: SurvivalDataset, g: CensoringModel | None, spec: LossSpec,
                  floor: float = WEIGHT_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Weight and outcome matrices ``(W, Y)`` of shape ``(n, K)``."""
    if spec.kind == FULL_L2:
        return np.ones((data.n, 1)), time_outcome(data.time, spec.scale)[:, None]
    if spec.kind == IPCW_L2:
        return ipcw_weights(data, g, floor)[:, None], time_outcome(data.time, spec.scale)[:, None]
    W = np.empty((data.n, spec.n_channels))
    Y = np.empty((data.n, spec.n_channels))
    for k, (t, a) in enumerate(zip(spec.times, spec.weights)):
        w, z = brier_channel(data, g, t, floor)
        W[:, k] = a * w
        Y[:, k] = z
    return W, Y


def channel_risk(W, Y, P) -> float:
    """(1/n) sum of weighted squared errors over all channels."""
    W = np.asarray(W, dtype=float)
    return float(np.sum(W * (np.asarray(Y) - np.asarray(P)) ** 2) / W.shape[0])


def brier_score_ipcw(predictions, data: SurvivalDataset, g: CensoringModel, t: float) -> float:
    """BS^c(t) through the transformed-indicator IPCW form."""
    w, z = brier_channel(data, g, t)
    return float(np.sum(w * (z - np.asarray(predictions, dtype=float)) ** 2) / data.n)


def brier_score_groups(predictions, data: SurvivalDataset, g: CensoringModel, t: float) -> float:
    """BS^c(t) through the three-group decomposition.

    Group 1 (censored by ``t``) contributes nothing, group 2 (event by ``t``)
    is weighted by Ḡ(T̃_i-|w_i), group 3 (still at risk) by Ḡ(t-|w_i).
    """
    pred = np.asarray(predictions, dtype=float)
    at_risk = BrierTransform(t).at_risk(data.time, data.event)
    died = data.event & ~at_risk
    g_own = g.at_followup(data)
    g_t = g.at_followup(data, np.full(data.n, float(t)))
    _check_floor(g_own, died, WEIGHT_FLOOR, "(event before t)")
    _check_floor(g_t, at_risk, WEIGHT_FLOOR, "(at risk at t)")
    total = 0.0
    for i in range(data.n):
        if died[i]:
            total += (0.0 - pred[i]) ** 2 / g_own[i]
        elif at_risk[i]:
            total += (1.0 - pred[i]) ** 2 / g_t[i]
    return total / data.n


def _model_predictions(model, data: SurvivalDataset, t: float | None = None) -> np.ndarray:
    """Per-subject predictions; for Brier-grid models the column for ``t``."""
    if isinstance(model, np.ndarray) or isinstance(model, (list, tuple)):
        return np.asarray(model, dtype=float)
    P = model.predict_all(data.x)
    if P.ndim == 1:
        return P
    if t is None or P.shape[1] == 1:
        return P[:, 0]
    times = np.asarray(model.times, dtype=float)
    k = np.flatnonzero(np.isclose(times, t, rtol=0, atol=0))
    if k.size == 0:
        raise ValueError(f"model has no prediction for time {t:g}; grid is {list(model.times)}")
    return P[:, int(k[0])]


def ipcw_l2_risk(model, data: SurvivalDataset, g: CensoringModel, scale: str = LOG_TIME) -> float:
    w = ipcw_weights(data, g)
    return empirical_risk_l2(_model_predictions(model, data), time_outcome(data.time, scale), w)


def brier_risk(model, data: SurvivalDataset, g: CensoringModel, t: float, check: bool = True) -> float:
    pred = _model_predictions(model, data, t)
    value = brier_score_ipcw(pred, data, g, t)
    if check:
        other = brier_score_groups(pred, data, g, t)
        if not np.isclose(value, other, rtol=1e-10, atol=1e-12):
            raise AssertionError(f"Brier representations disagree: {value!r} vs {other!r}")
    return value


def composite_brier_risk(model, data: SurvivalDataset, g: CensoringModel,
                         times: Sequence[float], weights: Sequence[float]) -> float:
    if len(times) != len(weights):
        raise ValueError("times and weights differ in length")
    return float(sum(a * brier_risk(model, data, g, t, check=False) for t, a in zip(times, weights)))


def risk(model, data: SurvivalDataset, g: CensoringModel | None, spec: LossSpec) -> float:
    """Observed-data risk of ``model`` under ``spec``."""
    if spec.kind == FULL_L2:
        return empirical_risk_l2(_model_predictions(model, data), time_outcome(data.time, spec.scale))
    if spec.kind == IPCW_L2:
        return ipcw_l2_risk(model, data, g, spec.scale)
    W, Y = loss_channels(data, g, spec)
    P = model.predict_all(data.x) if not isinstance(model, np.ndarray) else model
    return channel_risk(W, Y, np.asarray(P, dtype=float).reshape(Y.shape))


def select_time_grid(data: SurvivalDataset, strategy: str, t: float | None = None,
                     tau: float | None = None) -> np.ndarray:
    """Evaluation times for Brier losses.

    ``one-fixed`` echoes ``t``; ``five-even`` gives ``j*tau/6`` for
    ``j = 1..5`` (``tau`` defaults to the largest follow-up time, which is
    the truncation time of truncated data); ``five-km`` gives the earliest
    Kaplan-Meier jump where the curve reaches each level in
    ``KM_GRID_LEVELS``.
    """
    if strategy == "one-fixed":
        if t is None or t <= 0:
            raise ValueError("one-fixed grid needs a positive time")
        return np.array([float(t)])
    if strategy == "five-even":
        tau = float(np.max(data.time)) if tau is None else float(tau)
        return tau * np.arange(1, 6) / 6.0
    if strategy == "five-km":
        km = kaplan_meier(data.time, data.event)
        out = []
        for p in KM_GRID_LEVELS:
            hit = np.flatnonzero(km.values <= p)
            if hit.size == 0:
                deepest = float(km.values[-1]) if km.values.size else 1.0
                raise ValueError(f"Kaplan-Meier curve never reaches {p}; deepest level is {deepest:.4f}")
            out.append(km.jump_times[hit[0]])
        out = np.array(out, dtype=float)
        if np.any(np.diff(out) <= 0):
            raise ValueError(f"five-km grid has repeated times {out.tolist()}; data too coarse")
        return out
    raise ValueError(f"unknown grid strategy {strategy!r} (one-fixed, five-even, five-km)")
