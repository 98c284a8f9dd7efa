"""Scenario generators and the replication driver for the simulation studies."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import cart, dsa
from .data import Covariate, SurvivalDataset, split_folds
from .estimators import PRODUCT_LIMIT, PROPORTIONAL_HAZARDS, truncate
from .loss import LossSpec, select_time_grid
from .metrics import concordance, pairwise_similarity, prediction_error, region_curves
from .partition import INF, Clause, Interval, PartitionModel, Region, attach_mean_times
from .selection import CensoringPolicy, cross_validate, final_fit

log = logging.getLogger(__name__)

HIGH, LOW = "high", "low"
DEPENDENT, INDEPENDENT = "dep", "indep"
LEVELS = (0.0, 0.30, 0.50)
N_COVARIATES = 5

#: (mean survival in the long-survival group, in the short-survival group)
SIGMA = {HIGH: (5.0, 0.5), LOW: (1.0, 0.5)}
#: P(W1 > 50 or W2 > 75) for W uniform on 1..100
P_LONG = 0.625

# Uniform censoring bounds.  With C ~ U(0, b) and T ~ Exp(mean s) the
# censored fraction is (s/b)(1 - exp(-b/s)); the constants below solve it
# for the nominal level (see ``calibrate_bounds``).
#: covariate-dependent: b = ratio * sigma inside each risk group
DEPENDENT_RATIO = {0.30: 3.1970591463459535, 0.50: 1.5936242600400403}
#: covariate-independent: one bound for everybody
INDEPENDENT_BOUND = {
    (HIGH, 0.30): 9.476238467269537, (HIGH, 0.50): 3.5549706069360494,
    (LOW, 0.30): 2.5401701710443785, (LOW, 0.50): 1.225779162904518,
}
#: median of the marginal survivor function, the single fixed Brier time
MARGINAL_MEDIAN = {HIGH: 1.365973830164296, LOW: 0.5265023796806078}

METHODS = ("partDSA_Brier_1fixed", "partDSA_Brier_5even", "partDSA_Brier_5km",
           "partDSA_IPCW", "CART_IPCW")
#: compared against in the original study but not implemented here
UNAVAILABLE = {"L&C_NLL": "external exponential-deviance tree method; not implemented"}

CORRECT_VARS = ("W1", "W2")


@dataclass(frozen=True)
class Scenario:
    signal: str = HIGH
    censoring: str = DEPENDENT
    nominal_level: float = 0.0
    n_train: int = 250
    n_test: int = 5000
    replicates: int = 100

    def __post_init__(self):
        if self.signal not in SIGMA:
            raise ValueError(f"signal must be 'high' or 'low', got {self.signal!r}")
        if self.censoring not in (DEPENDENT, INDEPENDENT):
            raise ValueError(f"censoring must be 'dep' or 'indep', got {self.censoring!r}")
        if not any(math.isclose(self.nominal_level, v) for v in LEVELS):
            raise ValueError(f"nominal level must be one of 0, 0.3, 0.5, got {self.nominal_level}")
        if self.n_train < 2 or self.n_test < 2:
            raise ValueError("training and test sizes must be at least 2")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.signal}-{self.censoring}-{round(self.nominal_level * 100)}"

    @property
    def level_key(self) -> float:
        return min(LEVELS, key=lambda v: abs(v - self.nominal_level))


def parse_scenario(name: str, **overrides) -> Scenario:
    """``"high-dep-30"`` style names: signal, censoring type, percent censored."""
    parts = name.strip().lower().split("-")
    if len(parts) != 3:
        raise ValueError(f"scenario {name!r} is not of the form <high|low>-<dep|indep>-<0|30|50>")
    signal, cens, pct = parts
    try:
        level = int(pct) / 100
    except ValueError:
        raise ValueError(f"scenario {name!r}: censoring percent must be 0, 30 or 50") from None
    return Scenario(signal, cens, level, **overrides)


def schema() -> tuple[Covariate, ...]:
    return tuple(Covariate(f"W{j + 1}") for j in range(N_COVARIATES))


def long_group(x: np.ndarray) -> np.ndarray:
    """Subjects with the larger mean survival: W1 > 50 or W2 > 75."""
    return (x[:, 0] > 50) | (x[:, 1] > 75)


def true_model(signal: str = HIGH, form: str = "partdsa") -> PartitionModel:
    """Generating structure as a partition (2 regions) or a tree (3 leaves).

    Predictions are log mean survival times.
    """
    hi, lo = SIGMA[signal]
    w1_hi = Clause(((0, Interval(50, INF)),))
    w2_hi = Clause(((0, Interval(-INF, 50)), (1, Interval(75, INF))))
    short = Clause(((0, Interval(-INF, 50)), (1, Interval(-INF, 75))))
    lhi, llo = (math.log(hi),), (math.log(lo),)
    if form == "partdsa":
        regions = (Region((w1_hi, w2_hi), lhi, hi), Region((short,), llo, lo))
    elif form == "cart":
        regions = (Region((w1_hi,), lhi, hi), Region((w2_hi,), lhi, hi), Region((short,), llo, lo))
    else:
        raise ValueError(f"form must be 'partdsa' or 'cart', got {form!r}")
    return PartitionModel(schema(), regions, LossSpec.ipcw_l2())


def censoring_fraction(bound: float, mean: float) -> float:
    """P(C < T) for C ~ U(0, bound), T ~ Exp(mean)."""
    r = bound / mean
    return (1.0 - math.exp(-r)) / r


def calibrate_bounds(level: float, signal: str) -> tuple[float, float]:
    """Solve for (dependent ratio, independent bound) hitting ``level``."""
    hi, lo = SIGMA[signal]
    ratio = brentq(lambda r: censoring_fraction(r, 1.0) - level, 1e-6, 1e3, xtol=1e-14)
    bound = brentq(lambda b: P_LONG * censoring_fraction(b, hi) + (1 - P_LONG) * censoring_fraction(b, lo)
                   - level, 1e-3, 1e4, xtol=1e-14)
    return ratio, bound


def marginal_median(signal: str) -> float:
    hi, lo = SIGMA[signal]
    return brentq(lambda t: P_LONG * math.exp(-t / hi) + (1 - P_LONG) * math.exp(-t / lo) - 0.5,
                  1e-9, 100, xtol=1e-14)


def marginal_quantile(signal: str, p: float) -> float:
    hi, lo = SIGMA[signal]
    return brentq(lambda t: P_LONG * math.exp(-t / hi) + (1 - P_LONG) * math.exp(-t / lo) - (1 - p),
                  1e-9, 1e4, xtol=1e-12)


def _streams(seed: int, replicate: int, k: int = 6) -> list[np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), int(replicate)])
    return [np.random.default_rng(s) for s in ss.spawn(k)]


def _draw(n: int, sigma: tuple[float, float], rng_w, rng_t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = rng_w.integers(1, 101, size=(n, N_COVARIATES)).astype(float)
    long = long_group(x)
    mean = np.where(long, sigma[0], sigma[1])
    return x, rng_t.exponential(mean), mean


def censoring_bounds(scenario: Scenario, mean: np.ndarray) -> np.ndarray | None:
    lvl = scenario.level_key
    if lvl == 0:
        return None
    if scenario.censoring == DEPENDENT:
        return DEPENDENT_RATIO[lvl] * mean
    return np.full(mean.shape, INDEPENDENT_BOUND[(scenario.signal, lvl)])


def generate(scenario: Scenario, seed: int, replicate: int = 0) -> tuple[SurvivalDataset, SurvivalDataset]:
    """One (train, test) pair; the test set is uncensored."""
    rw, rt, rc, tw, tt, _ = _streams(seed, replicate)
    sigma = SIGMA[scenario.signal]
    x, t, mean = _draw(scenario.n_train, sigma, rw, rt)
    bounds = censoring_bounds(scenario, mean)
    if bounds is None:
        time, event = t, np.ones(t.size, dtype=bool)
    else:
        c = rc.uniform(0.0, bounds)
        time, event = np.minimum(t, c), t <= c
    train = SurvivalDataset(schema(), x, time, event)
    xt, tt_, _ = _draw(scenario.n_test, sigma, tw, tt)
    test = SurvivalDataset(schema(), xt, tt_, np.ones(tt_.size, dtype=bool))
    return train, test


def fold_seed(seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(replicate)]).spawn(6)[5]
    return int(ss.generate_state(1)[0])


# -- study driver ---------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    folds: int = 5
    truncate: float = 0.05
    dsa: dsa.DsaConfig = field(default_factory=dsa.DsaConfig)
    cart: cart.CartConfig = field(default_factory=cart.CartConfig)
    curve_points: int = 101


def censoring_policy(scenario: Scenario) -> CensoringPolicy:
    if scenario.censoring == DEPENDENT:
        return CensoringPolicy(PROPORTIONAL_HAZARDS, CORRECT_VARS)
    return CensoringPolicy(PRODUCT_LIMIT)


def method_loss(method: str, train: SurvivalDataset, scenario: Scenario, tau: float) -> LossSpec:
    if method in ("partDSA_IPCW", "CART_IPCW"):
        return LossSpec.ipcw_l2()
    if method == "partDSA_Brier_1fixed":
        return LossSpec.brier(select_time_grid(train, "one-fixed", MARGINAL_MEDIAN[scenario.signal]))
    if method == "partDSA_Brier_5even":
        return LossSpec.brier(select_time_grid(train, "five-even", tau=tau))
    if method == "partDSA_Brier_5km":
        return LossSpec.brier(select_time_grid(train, "five-km"))
    if method in UNAVAILABLE:
        raise ValueError(f"method {method} is unavailable: {UNAVAILABLE[method]}")
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def method_fitter(method: str, config: StudyConfig):
    if method == "CART_IPCW":
        return lambda d, g, loss: cart.fit(d, g, loss, config.cart)
    return lambda d, g, loss: dsa.fit(d, g, loss, config.dsa)


def curve_grid(scenario: Scenario, points: int = 101) -> np.ndarray:
    return np.linspace(0.0, marginal_quantile(scenario.signal, 0.95), points)


def _safe_concordance(observed, predicted, tied_credit: float = 1.0) -> tuple[float, float]:
    try:
        return concordance(observed, predicted, tied_credit)
    except ValueError:
        return float("nan"), float("nan")


def evaluate_fit(model: PartitionModel, test: SurvivalDataset, truth: PartitionModel) -> dict:
    pred = np.array([r.mean_time for r in model.regions])[model.assign_all(test.x)]
    c_p, c_bar = _safe_concordance(test.time, pred)
    c_bar_half = _safe_concordance(test.time, pred, 0.5)[1]
    used = model.variables_used()
    return {
        "size": model.size,
        "n_correct": sum(v in CORRECT_VARS for v in used),
        "n_incorrect": sum(v not in CORRECT_VARS for v in used),
        "variables": ";".join(used),
        "c_p": c_p, "c_bar_p": c_bar, "c_bar_p_half": c_bar_half,
        "l_p": prediction_error(truth, model, test),
        "d_p": pairwise_similarity(truth, model, test),
    }


def run_replicate(scenario: Scenario, replicate: int, seed: int, methods: Sequence[str],
                  config: StudyConfig = StudyConfig()) -> tuple[list[dict], dict]:
    """Fit and score every method on one replicate.

    Returns the result rows (one per method) and the region survival curves
    on the scenario grid, keyed by method.
    """
    train_raw, test = generate(scenario, seed, replicate)
    tr = truncate(train_raw, config.truncate)
    train = tr.dataset
    base = {
        "replicate": replicate,
        "censored_raw": float(np.mean(~train_raw.event)),
        "censored_truncated": float(np.mean(~train.event)),
    }
    policy = censoring_policy(scenario)
    truth = true_model(scenario.signal)
    grid = curve_grid(scenario, config.curve_points)
    folds = split_folds(train, config.folds, fold_seed(seed, replicate))
    rows, curves = [], {}
    g_full = None
    for method in methods:
        row = dict(base, method=method, status="ok", error="")
        try:
            if g_full is None:
                g_full = policy.fit(train)
            loss = method_loss(method, train, scenario, tr.tau)
            fitter = method_fitter(method, config)
            cv = cross_validate(train, fitter, loss, folds, policy, max_size=config.dsa.max_regions)
            model, _ = final_fit(train, cv.chosen_size, fitter, loss, g_full)
            model = attach_mean_times(model, train, g_full)
            row["chosen_size"] = cv.chosen_size
            row.update(evaluate_fit(model, test, truth))
            curves[method] = np.array([c(grid) for c in region_curves(model, test)])
        except Exception as exc:  # recorded and counted, never dropped
            log.warning("%s replicate %d %s failed: %s", scenario.name, replicate, method, exc)
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows, curves


def _replicate_task(args):
    return run_replicate(*args)


REPLICATE_COLUMNS = ("method", "replicate", "status", "chosen_size", "size", "n_correct", "n_incorrect",
                     "variables", "c_p", "c_bar_p", "c_bar_p_half", "l_p", "d_p", "censored_raw",
                     "censored_truncated", "error")
AGGREGATE_COLUMNS = ("method", "replicates", "failed", "fitted_size", "n_correct", "n_incorrect",
                     "c_p", "c_bar_p", "c_bar_p_half", "l_p", "d_p", "c_p_undefined", "censored_raw",
                     "censored_truncated")
SIZE_COLUMNS = ("method", "root", "size_2", "size_3", "size_4_plus")


@dataclass
class ReplicationReport:
    scenario: Scenario
    seed: int
    methods: tuple[str, ...]
    rows: list[dict]
    curves: dict  # method -> list of (replicate, array of region curves)
    grid: np.ndarray

    def ok_rows(self, method: str) -> list[dict]:
        return [r for r in self.rows if r["method"] == method and r["status"] == "ok"]

    def aggregate(self) -> list[dict]:
        out = []
        for m in self.methods:
            ok = self.ok_rows(m)
            total = [r for r in self.rows if r["method"] == m]
            agg = {"method": m, "replicates": len(total), "failed": len(total) - len(ok)}
            for key, col in (("fitted_size", "size"), ("n_correct", "n_correct"), ("n_incorrect", "n_incorrect"),
                             ("c_p", "c_p"), ("c_bar_p", "c_bar_p"), ("c_bar_p_half", "c_bar_p_half"),
                             ("l_p", "l_p"), ("d_p", "d_p"), ("censored_raw", "censored_raw"),
                             ("censored_truncated", "censored_truncated")):
                vals = np.array([r[col] for r in ok], dtype=float)
                agg[key] = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else float("nan")
            agg["c_p_undefined"] = sum(math.isnan(r["c_p"]) for r in ok)
            out.append(agg)
        return out

    def size_distribution(self) -> list[dict]:
        out = []
        for m in self.methods:
            sizes = np.array([r["size"] for r in self.ok_rows(m)])
            n = max(sizes.size, 1)
            out.append({"method": m, "root": float(np.sum(sizes == 1) / n), "size_2": float(np.sum(sizes == 2) / n),
                        "size_3": float(np.sum(sizes == 3) / n), "size_4_plus": float(np.sum(sizes >= 4) / n)})
        return out

    def mean(self, method: str, key: str) -> float:
        for a in self.aggregate():
            if a["method"] == method:
                return a[key]
        raise KeyError(method)

    def band_rows(self) -> list[dict]:
        """Mean and 2.5/97.5 percentile survival per rank for 2- and 3-group fits."""
        rows = []
        for m in self.methods:
            for k in (2, 3):
                sel = [c for _, c in self.curves.get(m, []) if c.shape[0] == k]
                if not sel:
                    continue
                vals = np.stack(sel)
                lo, hi = np.quantile(vals, (0.025, 0.975), axis=0)
                mean = vals.mean(axis=0)
                for g in range(k):
                    for i, t in enumerate(self.grid):
                        rows.append({"method": m, "groups": k, "rank": g + 1, "n_fits": len(sel), "time": t,
                                     "mean": mean[g, i], "lower": lo[g, i], "upper": hi[g, i]})
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "replicates.csv", REPLICATE_COLUMNS, self.rows)
        _write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS, self.aggregate())
        _write_csv(out / "size_distribution.csv", SIZE_COLUMNS, self.size_distribution())
        _write_csv(out / "stratification_bands.csv",
                   ("method", "groups", "rank", "n_fits", "time", "mean", "lower", "upper"), self.band_rows())


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def run_study(scenario: Scenario, methods: Sequence[str] = METHODS, out_dir=None,
              replicates: int | None = None, seed: int = 1, jobs: int = 1,
              config: StudyConfig = StudyConfig()) -> ReplicationReport:
    """Run ``replicates`` independent (train, test) draws and aggregate.

    Results are identical for any ``jobs`` value: each replicate owns its
    random streams and rows are sorted before aggregation.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            extra = f" ({UNAVAILABLE[m]})" if m in UNAVAILABLE else ""
            raise ValueError(f"unknown or unavailable method {m!r}{extra}; choose from {', '.join(METHODS)}")
    reps = scenario.replicates if replicates is None else replicates
    if reps < 1:
        raise ValueError("replicates must be >= 1")
    tasks = [(scenario, r, seed, methods, config) for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    rows, curves = [], {m: [] for m in methods}
    for r, (rrows, rcurves) in enumerate(results):
        rows.extend(rrows)
        for m, c in rcurves.items():
            curves[m].append((r, c))
    order = {m: i for i, m in enumerate(methods)}
    rows.sort(key=lambda row: (order[row["method"]], row["replicate"]))
    report = ReplicationReport(scenario, seed, methods, rows, curves, curve_grid(scenario, config.curve_points))
    if out_dir is not None:
        report.write(out_dir)
    return report


def scenario_dict(scenario: Scenario) -> dict:
    return asdict(scenario)
