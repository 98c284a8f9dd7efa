import logging

import numpy as np
import pytest

from riskpart import dsa
from riskpart.data import DataError, split_folds
from riskpart.dsa import CandidateList, DsaConfig
from riskpart.estimators import fit_censoring_model, ipcw_weights, truncate
from riskpart.loss import LossSpec
from riskpart.partition import PartitionModel
from riskpart.selection import CensoringPolicy, CvCurve, cross_validate, final_fit, first_minimum
from riskpart.simulation import generate, parse_scenario


def test_first_minimum_rule():
    assert first_minimum([5, 3, 4, 2]) == 1
    assert first_minimum([5, 4, 3, 2]) == 3
    assert first_minimum([2, 2, 1]) == 0  # non-strict comparison prefers parsimony
    assert first_minimum([7]) == 0


def _fitter(cfg=DsaConfig(max_regions=5)):
    return lambda d, g, loss: dsa.fit(d, g, loss, cfg)


def _data(name="high-dep-30", seed=1, n=150):
    train, _ = generate(parse_scenario(name, n_train=n, n_test=10), seed)
    return truncate(train, 0.05).dataset


def test_root_cv_risk_closed_form():
    d = _data()
    folds = split_folds(d, 5, 3)
    policy = CensoringPolicy("km")

    def fitter(tr, g, loss):
        w = ipcw_weights(tr, g)
        mu = np.sum(w * np.log(tr.time)) / np.sum(w)
        return CandidateList({1: PartitionModel.root(tr.schema, mu)}, {1: 0.0})

    cv = cross_validate(d, fitter, LossSpec.ipcw_l2(), folds, policy)
    expect = []
    for f in range(5):
        tr, va = d.subset(np.flatnonzero(folds != f)), d.subset(np.flatnonzero(folds == f))
        g = fit_censoring_model(tr, "km")
        w = ipcw_weights(tr, g)
        mu = np.sum(w * np.log(tr.time)) / np.sum(w)
        wv = ipcw_weights(va, g)
        expect.append(np.sum(wv * (np.log(va.time) - mu) ** 2) / va.n)
    assert cv.cv_risk[0] == pytest.approx(np.mean(expect), rel=1e-12)
    assert cv.chosen_size == 1


def test_cross_validate_high_signal_picks_two():
    d = _data("high-dep-0", 2, 250)
    folds = split_folds(d, 5, 1)
    cv = cross_validate(d, _fitter(), LossSpec.ipcw_l2(), folds, CensoringPolicy("km"), max_size=5)
    assert cv.sizes == (1, 2, 3, 4, 5)
    assert cv.chosen_size == 2
    assert len(cv.fold_risks) == 5


def test_fold_relabelling_invariance():
    d = _data()
    folds = split_folds(d, 5, 9)
    policy = CensoringPolicy("cox", ("W1", "W2"))
    a = cross_validate(d, _fitter(), LossSpec.ipcw_l2(), folds, policy)
    b = cross_validate(d, _fitter(), LossSpec.ipcw_l2(), (folds + 2) % 5, policy)
    assert a.cv_risk == pytest.approx(b.cv_risk, rel=1e-12)
    assert a.chosen_size == b.chosen_size


def test_missing_sizes_carried_forward():
    d = _data()
    folds = split_folds(d, 5, 1)

    def sparse(tr, g, loss):
        c = dsa.fit(tr, g, loss, DsaConfig(max_regions=3))
        return CandidateList({k: c.models[k] for k in (1, 3) if k in c.models},
                             {k: c.risks[k] for k in (1, 3) if k in c.risks})

    cv = cross_validate(d, sparse, LossSpec.ipcw_l2(), folds, CensoringPolicy("km"), max_size=4)
    assert cv.cv_risk[0] == cv.cv_risk[1]
    assert cv.cv_risk[2] == cv.cv_risk[3]


def test_fold_without_events():
    d = _data()
    d0 = d.replace(event=np.arange(d.n) < 3)
    folds = np.where(np.arange(d.n) < 3, 0, 1 + np.arange(d.n) % 4)
    with pytest.raises(DataError, match="no events"):
        cross_validate(d0, _fitter(), LossSpec.ipcw_l2(), folds, CensoringPolicy("km"))


def test_final_fit_and_fallback(caplog):
    d = _data("high-dep-0", 2, 250)
    g = fit_censoring_model(d, "km")
    m, cands = final_fit(d, 1, _fitter(), LossSpec.ipcw_l2(), g)
    assert m.size == 1
    m2, _ = final_fit(d, 2, _fitter(), LossSpec.ipcw_l2(), g)
    assert m2.size == 2 and max(len(r.clauses) for r in m2.regions) == 2

    def few(tr, g, loss):
        c = dsa.fit(tr, g, loss, DsaConfig(max_regions=2))
        return CandidateList(dict(c.models), dict(c.risks))

    with caplog.at_level(logging.WARNING):
        m9, _ = final_fit(d, 9, few, LossSpec.ipcw_l2(), g)
    assert m9.size == 2 and "not in the full-data candidate list" in caplog.text


def test_policy_falls_back_without_censoring():
    d = _data("high-dep-0")
    g = CensoringPolicy("cox", ("W1",)).fit(d)
    assert g.kind == "product-limit"


def test_curve_csv(tmp_path):
    CvCurve((1, 2), (2.0, 1.0), 2).to_csv(tmp_path / "cv.csv")
    assert (tmp_path / "cv.csv").read_text().splitlines() == ["size,cv_risk", "1,2.0", "2,1.0"]
