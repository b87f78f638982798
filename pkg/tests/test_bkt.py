import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from careless.bkt import (
    BktParams,
    GridSpec,
    bkt_predict_correct,
    bkt_update,
    contextual_slip,
    fit_bkt,
    fit_bkt_grid,
    grid_sse,
    load_params,
    lookahead_slip,
    save_params,
    skill_sequences,
    trace_knowledge,
)
from careless.errors import DegenerateUpdate, MissingParams, MultiSkillUnsupported, NoData
from careless.events import Dataset
from careless.sim import simulate, single_skill_config
from helpers import make_dataset, slip_by_enumeration

prob = st.floats(0.0, 1.0)
inner = st.floats(0.01, 0.99)


def test_predict_examples():
    assert bkt_predict_correct(1.0, BktParams(0, 0, 0.3, 0.0)) == 1.0
    assert bkt_predict_correct(0.0, BktParams(0, 0, 0.2, 0.1)) == 0.2
    assert bkt_predict_correct(0.5, BktParams(0, 0, 0.2, 0.1)) == pytest.approx(0.55, abs=1e-15)


def test_update_examples():
    p = BktParams(0.5, 0.0, 0.2, 0.1)
    post, nxt = bkt_update(0.5, True, p)
    assert post == pytest.approx(0.45 / 0.55, abs=1e-15) and nxt == post
    post, _ = bkt_update(0.5, False, p)
    assert post == pytest.approx(0.05 / 0.45, abs=1e-15)
    for obs in (True, False):
        assert bkt_update(1.0, obs, BktParams(0, 0.3, 0.2, 0.1))[1] == 1.0
    with pytest.raises(DegenerateUpdate):
        bkt_update(0.0, True, BktParams(0, 0, 0.0, 0.1))


@given(prob, st.booleans(), prob, st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_update_probabilities(pL, obs, T, G, S):
    p = BktParams(0.5, T, G, S)
    try:
        post, nxt = bkt_update(pL, obs, p)
    except DegenerateUpdate:
        return
    assert 0.0 <= post <= 1.0 + 1e-12
    assert nxt >= post - 1e-15 and nxt <= 1.0 + 1e-12


def test_lookahead_examples():
    p = BktParams(0.6, 0.2, 0.2, 0.1)
    assert lookahead_slip(0.6, True, True, p) == pytest.approx(0.8488193377113316, abs=1e-12)
    assert lookahead_slip(1.0, False, False, p) == 1.0
    assert lookahead_slip(0.0, False, False, BktParams(0, 0.0, 0.2, 0.1)) == 0.0


@given(prob, st.floats(0, 1), st.floats(0, 0.99), st.floats(0, 0.99), st.booleans(), st.booleans())
@settings(max_examples=400)
def test_lookahead_equals_path_enumeration(prior, T, G, S, a1, a2):
    p = BktParams(0.5, T, G, S)
    oracle_den_ok = True
    try:
        got = lookahead_slip(prior, a1, a2, p)
    except DegenerateUpdate:
        oracle_den_ok = False
    if oracle_den_ok:
        assert got == pytest.approx(slip_by_enumeration(prior, T, G, S, a1, a2), abs=1e-9)


@given(prob, prob, inner, st.floats(0, 0.49), st.floats(0, 0.49), st.booleans(), st.booleans())
def test_lookahead_monotone_in_prior(p1, p2, T, G, S, a1, a2):
    p = BktParams(0.5, T, G, S)
    lo, hi = sorted((p1, p2))
    assert lookahead_slip(lo, a1, a2, p) <= lookahead_slip(hi, a1, a2, p) + 1e-12


@given(prob, prob, st.floats(0, 0.49), st.floats(0, 0.49))
def test_two_correct_lookahead_raises_belief(prior, T, G, S):
    assume(G < 1 - S and (prior > 0 or T > 0 or G > 0))
    assert lookahead_slip(prior, True, True, BktParams(0.5, T, G, S)) >= prior - 1e-12


def _naive_sse(d, skill, cell):
    p = BktParams(*cell)
    total = 0.0
    for s in d.students:
        pL = p.L0
        for ev in s.events:
            if ev.skills[0] != skill:
                continue
            pred = bkt_predict_correct(pL, p)
            total += (float(ev.correct) - pred) ** 2
            pL = bkt_update(pL, ev.correct, p)[1]
    return total


def test_prefix_tree_sse_matches_naive_loop():
    d, _ = simulate(single_skill_config(60, 12, seed=3))
    seq = skill_sequences(d, "A")
    rng = np.random.default_rng(0)
    cells = np.column_stack([rng.uniform(0.01, 0.99, 50), rng.uniform(0, 1, 50),
                             rng.uniform(0.01, 0.5, 50), rng.uniform(0.01, 0.5, 50)])
    fast = grid_sse(seq, cells)
    slow = [_naive_sse(d, "A", c) for c in cells]
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_grid_singleton_and_ties():
    d = make_dataset({"a": [("A", 1), ("A", 0), ("A", 1)]})
    one = GridSpec(values=((0.3,), (0.1,), (0.2,), (0.1,)))
    assert fit_bkt_grid(d, "A", one).as_tuple() == (0.3, 0.1, 0.2, 0.1)
    # G = S = 0.5 predicts 0.5 everywhere, so every cell ties: smallest wins
    flat = GridSpec(values=((0.6, 0.4), (0.3, 0.1), (0.5,), (0.5,)))
    p = fit_bkt_grid(d, "A", flat)
    assert p.as_tuple() == (0.4, 0.1, 0.5, 0.5)


def test_always_correct_student_pushes_L0_to_max():
    d = make_dataset({"a": [("A", 1)]})
    grid = GridSpec(coarse_step=0.1, fine_step=0.05, fine_radius=0.1)
    p = fit_bkt_grid(d, "A", grid)
    assert p.L0 == 1.0
    seq = skill_sequences(d, "A")
    axes = [np.round(np.arange(0, 1.0001, 0.1), 10)] * 2 + [np.round(np.arange(0, 0.5001, 0.1), 10)] * 2
    cells = np.array(list(itertools.product(*axes)))
    assert p.sse <= grid_sse(seq, cells).min() + 1e-15


def test_grid_fit_ignores_student_order():
    d, _ = simulate(single_skill_config(40, 10, seed=2))
    rev = Dataset(tuple(reversed(d.students)))
    grid = GridSpec(coarse_step=0.1, fine_step=0.05, fine_radius=0.05)
    assert fit_bkt_grid(d, "A", grid) == fit_bkt_grid(rev, "A", grid)
    assert fit_bkt_grid(d, "A", grid).sse == fit_bkt_grid(rev, "A", grid).sse


def test_fit_bkt_parallel_matches_serial():
    d = make_dataset({
        f"s{k}": [(sk, (k + j) % 3 != 0) for j in range(6) for sk in "AB"] for k in range(8)
    })
    grid = GridSpec(coarse_step=0.1, fine_step=0.05, fine_radius=0.05)
    assert fit_bkt(d, grid, n_jobs=1) == fit_bkt(d, grid, n_jobs=2)


def test_no_data_and_multiskill():
    with pytest.raises(NoData):
        fit_bkt_grid(make_dataset({"a": [("A", 1)]}), "B")
    with pytest.raises(MultiSkillUnsupported):
        fit_bkt_grid(make_dataset({"a": [(("A", "B"), 1)]}), "A")


def test_trace_examples():
    p = {"A": BktParams(0.5, 0.0, 0.2, 0.1)}
    tr = trace_knowledge(make_dataset({"a": [("A", 1)]}), p)
    assert tr.posterior[0] == pytest.approx(0.8182, abs=1e-4)
    d = make_dataset({"a": [("A", 1)] * 20, "b": [("B", 1)]})
    with pytest.raises(MissingParams):
        trace_knowledge(d, p)
    tr = trace_knowledge(d, {"A": BktParams(0.1, 0.1, 0.2, 0.1), "B": BktParams(0.5, 0, 0.2, 0.1)})
    pairs = tr.for_student_skill(d, "a", "A")
    priors = [a for a, _ in pairs]
    assert len(pairs) == 20 and all(x <= y for x, y in zip(priors, priors[1:]))
    assert tr.for_student_skill(d, "b", "A") == []


def test_contextual_slip_uses_lookahead_and_flag():
    d = make_dataset({"a": [("A", 1), ("A", 0), ("A", 1), ("A", 1), ("B", 0)]})
    params = {"A": BktParams(0.4, 0.2, 0.2, 0.1), "B": BktParams(0.4, 0.2, 0.2, 0.1)}
    tr = trace_knowledge(d, params)
    (est,) = contextual_slip(d, tr, params)
    assert est.event == 1 and est.skill == "A" and est.model == "bkt_contextual"
    assert est.probability == pytest.approx(
        slip_by_enumeration(tr.prior[1], 0.2, 0.2, 0.1, True, True), abs=1e-12)
    (cond,) = contextual_slip(d, tr, params, condition_on_current=True)
    assert cond.probability == pytest.approx(
        slip_by_enumeration(tr.posterior_obs[1], 0.2, 0.2, 0.1, True, True), abs=1e-12)
    assert cond.probability < est.probability


def test_params_file_round_trip(tmp_path):
    params = {"A": BktParams(0.4, 0.15, 0.2, 0.08, sse=3.5)}
    save_params(params, tmp_path / "p.json", {"seed": 1})
    back = load_params(tmp_path / "p.json")
    assert back == params and back["A"].sse == 3.5
