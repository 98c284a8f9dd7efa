import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from riskpart.data import Covariate, DataError, SurvivalDataset
from riskpart.estimators import (PRODUCT_LIMIT, CensoringModel, StepSurvivalCurve, cox_partial_loglik,
                                 fit_censoring_model, fit_cox, ipcw_weights, kaplan_meier, truncate)


def km_oracle(times, events, t):
    """Plain product over distinct event times <= t."""
    s = 1.0
    for u in sorted(set(times[events])):
        if u > t:
            break
        d = np.sum((times == u) & events)
        r = np.sum(times >= u)
        s *= 1 - d / r
    return s


def test_km_hand_example():
    km = kaplan_meier([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
    # 4/5, then 1 death of 4 at risk, then 1 of 2
    assert km.jump_times.tolist() == [1, 2, 3]
    assert np.allclose(km.values, [0.8, 0.6, 0.3], rtol=0, atol=1e-15)
    assert km(0.5) == 1.0 and km(2) == pytest.approx(0.6) and km.left(2) == pytest.approx(0.8)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 12), st.booleans()), min_size=1, max_size=40))
def test_km_matches_oracle(obs):
    t = np.array([o[0] for o in obs], float)
    e = np.array([o[1] for o in obs])
    km = kaplan_meier(t, e)
    for q in np.arange(0, 13.5, 0.5):
        assert km(q) == pytest.approx(km_oracle(t, e, q), abs=1e-12)


def test_step_curve_validation(tmp_path):
    with pytest.raises(ValueError):
        StepSurvivalCurve(np.array([2.0, 1.0]), np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        StepSurvivalCurve(np.array([1.0, 2.0]), np.array([0.4, 0.5]))
    c = StepSurvivalCurve(np.array([1.0]), np.array([0.5]))
    c.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "time,survival"


def breslow_loglik(beta, t, e, x):
    ll = 0.0
    for i in range(len(t)):
        if e[i]:
            risk = t >= t[i]
            ll += x[i] @ beta - math.log(np.sum(np.exp(x[risk] @ beta)))
    return ll


def test_partial_loglik_matches_loop(rng):
    t = np.ceil(rng.exponential(2, 30) * 3) / 3
    e = rng.random(30) < 0.7
    x = rng.normal(size=(30, 2))
    for beta in (np.zeros(2), np.array([0.3, -0.7])):
        assert cox_partial_loglik(beta, t, e, x) == pytest.approx(breslow_loglik(beta, t, e, x), rel=1e-12)


def test_cox_fit_maximises_likelihood(rng):
    n = 120
    x = rng.normal(size=(n, 2))
    t = rng.exponential(np.exp(-(0.8 * x[:, 0] - 0.4 * x[:, 1])))
    t = np.round(t, 2) + 0.01
    e = rng.random(n) < 0.8
    beta, means, ht, h = fit_cox(t, e, x)
    ref = minimize(lambda b: -breslow_loglik(b, t, e, x), np.zeros(2), method="BFGS", options={"gtol": 1e-10})
    assert np.allclose(beta, ref.x, atol=1e-5)
    # Breslow baseline at the covariate means
    xc = x - means
    for k, u in enumerate(ht):
        expect = sum(np.sum((t == v) & e) / np.sum(np.exp(xc[t >= v] @ beta)) for v in ht[: k + 1])
        assert h[k] == pytest.approx(expect, rel=1e-10)


def test_censoring_models(rng):
    n = 80
    x = rng.integers(1, 101, size=(n, 2)).astype(float)
    t = rng.exponential(2.0, n)
    c = rng.uniform(0, 4 + x[:, 0] / 25)
    d = SurvivalDataset((Covariate("W1"), Covariate("W2")), x, np.minimum(t, c), t <= c)
    km = fit_censoring_model(d, "km")
    assert km.kind == PRODUCT_LIMIT
    ref = kaplan_meier(d.time, ~d.event)
    assert np.array_equal(km.at_followup(d), ref.left(d.time))
    cox = fit_censoring_model(d, "cox", ("W1", "W2"))
    g = cox.evaluate(d.time, d.x, d.names, left=False)
    lam = np.concatenate(([0.0], cox.cumhaz))[np.searchsorted(cox.cumhaz_times, d.time, side="right")]
    expect = np.exp(-lam * np.exp((x - cox.means) @ cox.coefficients))
    assert np.allclose(g, expect, rtol=1e-12)
    assert np.all(cox.at_followup(d) >= g - 1e-15)  # left limit is never below the value
    with pytest.raises(ValueError):
        fit_censoring_model(d, "weibull")
    with pytest.raises(DataError, match="no censored"):
        fit_censoring_model(d.replace(event=np.ones(n, bool)), "cox", ("W1",))


def test_truncation_order_statistic(rng):
    n = 100
    t = rng.permutation(np.arange(1, n + 1)).astype(float)
    d = SurvivalDataset((Covariate("a"),), np.zeros((n, 1)), t, rng.random(n) < 0.5)
    res = truncate(d, 0.05)
    assert res.tau == 95.0 and res.n_clamped == 5
    over = t > 95
    assert np.all(res.dataset.time[over] == 95) and np.all(res.dataset.event[over])
    assert np.array_equal(res.dataset.event[~over], d.event[~over])
    with pytest.raises(ValueError):
        truncate(d, 0.001)


def test_ipcw_weights(toy):
    g = fit_censoring_model(toy, "km")
    w = ipcw_weights(toy, g)
    assert np.all(w[~toy.event] == 0)
    assert np.all(w[toy.event] >= 1)
    # a curve that drops to zero before an observed event cannot weight it
    dead = CensoringModel(PRODUCT_LIMIT, StepSurvivalCurve(np.array([1.0]), np.array([0.0])))
    with pytest.raises(DataError, match="floor"):
        ipcw_weights(toy, dead)
