import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from careless.bkfc import (
    BkfcModel,
    bkfc_estimates,
    carelessness_from_omega,
    fit_bkfc,
    load_model,
    load_published_model,
    omega,
    predict_correct,
    save_model,
)
from careless.errors import ManifestMismatch, SchemaError, ZeroVariance
from careless.events import Dataset
from careless.features import COLUMNS, FeatureMatrix, FeatureVector, encode, extract_features
from careless.logistic import loglik
from careless.pfa import fit_pfa, pfa_trace
from careless.sim import default_config, multi_skill_config, simulate
from helpers import make_dataset

col = {c: k for k, c in enumerate(COLUMNS)}


def test_published_fixture():
    m = load_published_model()
    assert m.omega_betas[0] == -0.013
    assert m.omega_betas[13] == 0.528
    assert m.omega_betas[17] == 0.199
    assert m.beta0 is None and m.beta1 is None
    assert np.all(m.center == 0)
    with pytest.raises(SchemaError):
        predict_correct(m, [0.5], FeatureMatrix(np.zeros((1, 18))))


def test_published_omega_examples():
    m = load_published_model()
    assert omega(np.zeros(18), m) == 0.0
    x = encode(FeatureVector(duration=10.0))
    assert abs(omega(x, m) - (-0.13)) <= 1e-12
    x = encode(FeatureVector(gaming_options="multiple"))
    assert abs(omega(x, m) - 0.199) <= 1e-12


def test_fixture_with_seventeen_values(tmp_path):
    blob = json.loads(json.dumps(load_published_model().to_dict()))
    blob["omega_betas"] = blob["omega_betas"][:17]
    path = tmp_path / "short.json"
    path.write_text(json.dumps(blob))
    with pytest.raises(SchemaError):
        load_published_model(path)
    blob["omega_betas"] = ["x"] * 18
    path.write_text(json.dumps(blob))
    with pytest.raises(SchemaError):
        load_published_model(path)


def test_manifest_checked():
    m = load_published_model()
    reordered = FeatureMatrix(np.zeros((2, 18)), COLUMNS[::-1])
    with pytest.raises(ManifestMismatch):
        omega(reordered, m)
    with pytest.raises(ManifestMismatch):
        omega(np.zeros(17), m)


def test_cdf_examples():
    assert carelessness_from_omega([0.0])[0] == 0.5
    assert carelessness_from_omega([-0.1])[0] == pytest.approx(0.539827837277029, abs=1e-12)
    # oracle: Phi(x) = (1 + erf(x / sqrt 2)) / 2
    for w in (-2.5, -0.3, 0.7, 1.9):
        assert carelessness_from_omega([w])[0] == pytest.approx(
            0.5 * (1 + math.erf(-w / math.sqrt(2))), abs=1e-14)
    with pytest.raises(ZeroVariance):
        carelessness_from_omega([0.3, 0.3, 0.3], "standardized")
    with pytest.raises(ValueError):
        carelessness_from_omega([0.3], "other")


@given(st.lists(st.integers(-6000, 6000), min_size=2, max_size=50, unique=True))
def test_strictly_decreasing_in_omega(ws):
    # a 1e-3 lattice: values closer than float resolution cannot be ordered,
    # and past omega = -8 Phi(-omega) rounds to 1.0
    ws = np.sort(np.array(ws)) / 1000.0
    raw = carelessness_from_omega(ws)
    assert np.all(np.diff(raw) < 0)
    assert np.all((raw > 0) & (raw < 1))
    if np.ptp(ws) > 1e-6:
        std = carelessness_from_omega(ws, "standardized")
        assert np.all(np.diff(std) < 0)


@pytest.fixture(scope="module")
def fitted():
    d, truth = simulate(default_config(n_students=80, seed=21))
    X = extract_features(d)
    pfa = fit_pfa(d)
    tr = pfa_trace(d, pfa)
    return d, truth, X, tr, fit_bkfc(d, tr, X)


def test_fit_beats_knowledge_only(fitted):
    d, _, X, tr, model = fitted
    y = d.correct.astype(float)
    Z = np.column_stack([np.ones(d.n_events), tr.p_m, X.values - model.center])
    full = loglik(np.concatenate([[model.beta0, model.beta1], model.omega_betas]), Z, y)
    knowledge_only = fit_bkfc(d, tr, FeatureMatrix(np.zeros_like(X.values)))
    assert np.all(knowledge_only.omega_betas == 0)
    ll0 = loglik(np.array([knowledge_only.beta0, knowledge_only.beta1]), Z[:, :2], y)
    assert full >= ll0


def test_planted_speed_direction(fitted):
    # careless answers are fast and wrong, so longer durations go with success
    d, _, X, tr, model = fitted
    assert model.omega_betas[col["duration"]] > 0 or model.omega_betas[col["z_problem"]] > 0
    assert model.omega_betas[col["z_problem"]] + model.omega_betas[col["z_skill"]] > 0


def test_zero_variance_features_get_zero_weight(fitted):
    d, _, X, tr, _ = fitted
    Xc = X.values.copy()
    Xc[:, :] = 3.0
    m = fit_bkfc(d, tr, FeatureMatrix(Xc))
    assert np.all(m.omega_betas == 0)
    assert np.all(omega(FeatureMatrix(Xc), m) == 0)


def test_row_order_does_not_matter(fitted):
    d, _, X, tr, model = fitted
    shuffled = Dataset(tuple(reversed(d.students)), d.score_max)
    X2 = extract_features(shuffled)
    m2 = fit_bkfc(shuffled, pfa_trace(shuffled, fit_pfa(shuffled)), X2)
    np.testing.assert_allclose(m2.omega_betas, model.omega_betas, atol=1e-8)
    assert m2.beta0 == pytest.approx(model.beta0, abs=1e-8)


def test_uncentered_fit_has_same_slopes(fitted):
    d, _, X, tr, model = fitted
    raw = fit_bkfc(d, tr, X, center=False)
    # both stop at the same gradient tolerance, not at the same point
    np.testing.assert_allclose(raw.omega_betas, model.omega_betas, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(predict_correct(raw, tr.p_m, X), predict_correct(model, tr.p_m, X),
                               atol=1e-6)


def test_scores_every_incorrect_event_including_multi_skill():
    d, _ = simulate(multi_skill_config(n_students=40, seed=2))
    X = extract_features(d)
    model = fit_bkfc(d, pfa_trace(d, fit_pfa(d)), X)
    est = bkfc_estimates(d, X, model)
    assert [e.event for e in est] == list(np.flatnonzero(~d.correct))
    assert any(len(e.skills) > 1 for e in est)
    assert all(0 < e.probability < 1 for e in est)


def test_last_two_opportunities_are_scored():
    d = make_dataset({"a": [("A", 1), ("A", 0), ("A", 0)], "b": [("A", 0), ("A", 1), ("A", 1)]},
                     {"a": [5.0, 9.0, 3.0], "b": [7.0, 4.0, 6.0]})
    X = extract_features(d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_bkfc(d, pfa_trace(d, fit_pfa(d)), X)
    assert {e.event for e in bkfc_estimates(d, X, model)} == {1, 2, 3}


def test_model_round_trip(tmp_path, fitted):
    model = fitted[-1]
    save_model(model, tmp_path / "m.json", {"seed": 21})
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.omega_betas, model.omega_betas)
    np.testing.assert_array_equal(back.center, model.center)
    assert back.beta0 == model.beta0
    blob = json.loads((tmp_path / "m.json").read_text())
    blob["manifest"] = "0" * 16
    with pytest.raises(SchemaError):
        BkfcModel.from_dict(blob)
