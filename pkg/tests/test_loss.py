import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskpart.data import Covariate, SurvivalDataset
from riskpart.estimators import fit_censoring_model
from riskpart.loss import (FULL_L2, LossSpec, BrierTransform, brier_risk, brier_score_groups,
                           brier_score_ipcw, composite_brier_risk, composite_weights, empirical_risk_l2,
                           ipcw_l2_risk, loss_channels, risk, select_time_grid)
from riskpart.partition import PartitionModel


def _ds(t, e, x=None):
    t = np.asarray(t, float)
    x = np.zeros((t.size, 1)) if x is None else x
    return SurvivalDataset((Covariate("a"),), x, t, np.asarray(e, bool))


def test_brier_transform_groups():
    tr = BrierTransform(2.0)
    tt, dt, z = tr([1.0, 1.5, 2.0, 2.0, 3.0, 4.0], [1, 0, 1, 0, 1, 0])
    assert tt.tolist() == [1.0, 1.5, 2.0, 2.0, 2.0, 2.0]
    # censored before t drops out; event at t counts as failed; censored at t is still at risk
    assert dt.tolist() == [True, False, True, True, True, True]
    assert z.tolist() == [0, 0, 0, 1, 1, 1]


def test_brier_hand_value():
    # G: censoring KM; subjects: event@1, censored@2, event@3, censored@4
    d = _ds([1, 2, 3, 4], [1, 0, 1, 0])
    g = fit_censoring_model(d, "km")
    pred = np.array([0.2, 0.4, 0.6, 0.8])
    # t = 2.5: subject0 died (weight 1/G(1-)=1), subject1 censored before t, subjects 2,3 at risk
    # G(2.5-) = 1 - 1/3 = 2/3
    expect = ((0 - 0.2) ** 2 / 1 + (1 - 0.6) ** 2 / (2 / 3) + (1 - 0.8) ** 2 / (2 / 3)) / 4
    assert brier_score_groups(pred, d, g, 2.5) == pytest.approx(expect, rel=1e-14)
    assert brier_score_ipcw(pred, d, g, 2.5) == pytest.approx(expect, rel=1e-14)


def test_ipcw_l2_hand_value():
    d = _ds([1, 2, 3, 4], [1, 0, 1, 0])
    g = fit_censoring_model(d, "km")
    # weights 1/G(T-): 1, 0, 1/(2/3), 0
    expect = (np.log(1) ** 2 + 1.5 * np.log(3) ** 2) / 4
    assert ipcw_l2_risk(np.zeros(4), d, g) == pytest.approx(expect, rel=1e-14)


def test_composite_weights_and_risk():
    assert composite_weights([1, 2, 4]) == (0.25, 0.5, 1.0)
    rng = np.random.default_rng(3)
    d = _ds(rng.exponential(1, 30), rng.random(30) < 0.7)
    g = fit_censoring_model(d, "km")
    times = (0.3, 0.6, 0.9)
    model = PartitionModel.root(d.schema, (0.7, 0.5, 0.3), LossSpec.brier(times))
    a = composite_weights(times)
    manual = sum(w * brier_score_groups(np.full(30, p), d, g, t) for w, p, t in zip(a, (0.7, 0.5, 0.3), times))
    assert risk(model, d, g, model.loss) == pytest.approx(manual, rel=1e-12)
    assert composite_brier_risk(model, d, g, times, a) == pytest.approx(manual, rel=1e-12)
    assert brier_risk(model, d, g, 0.6) == pytest.approx(brier_score_groups(np.full(30, 0.5), d, g, 0.6))
    with pytest.raises(ValueError, match="no prediction"):
        brier_risk(model, d, g, 0.5)


def test_lossspec_validation_and_dict():
    with pytest.raises(ValueError):
        LossSpec("hinge")
    with pytest.raises(ValueError):
        LossSpec.brier([2, 1])
    s = LossSpec.brier([1.0, 2.0])
    assert LossSpec.from_dict(s.to_dict()) == s and s.n_channels == 2
    assert LossSpec.from_dict(LossSpec.ipcw_l2().to_dict()) == LossSpec.ipcw_l2()


def test_channels_shapes(rng):
    from conftest import random_dataset
    d = random_dataset(rng, n=30)
    g = fit_censoring_model(d, "km")
    W, Y = loss_channels(d, g, LossSpec.brier([0.5, 1.0]))
    assert W.shape == Y.shape == (30, 2)
    W, Y = loss_channels(d, g, LossSpec.ipcw_l2())
    assert W.shape == (30, 1) and np.all(W[~d.event] == 0)
    W, Y = loss_channels(d, None, LossSpec(FULL_L2))
    assert np.all(W == 1) and np.allclose(Y[:, 0], np.log(d.time))


def test_empirical_risk_checks():
    assert empirical_risk_l2([1, 2], [1, 4]) == 2.0
    with pytest.raises(ValueError):
        empirical_risk_l2([1], [1, 2])


def test_time_grids():
    t = np.arange(1, 21, dtype=float)
    d = _ds(t, np.ones(20))
    assert select_time_grid(d, "one-fixed", 3.0).tolist() == [3.0]
    assert np.allclose(select_time_grid(d, "five-even", tau=12.0), [2, 4, 6, 8, 10])
    # uncensored KM drops 0.05 per subject: levels 0.85, 0.70, ... reached at 3, 6, 9, 12, 15
    assert select_time_grid(d, "five-km").tolist() == [3, 6, 9, 12, 15]
    with pytest.raises(ValueError, match="never reaches"):
        select_time_grid(_ds(t, np.r_[np.ones(3), np.zeros(17)]), "five-km")
    with pytest.raises(ValueError):
        select_time_grid(d, "weekly")


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 15), seed=st.integers(0, 10**6))
def test_brier_forms_agree_property(n, seed):
    rng = np.random.default_rng(seed)
    d = _ds(rng.exponential(1, n), rng.random(n) < 0.6)
    g = fit_censoring_model(d, "km")
    t = float(rng.uniform(0.01, d.time.max()))
    p = rng.random(n)
    assert brier_score_ipcw(p, d, g, t) == pytest.approx(brier_score_groups(p, d, g, t), rel=1e-12, abs=1e-12)
