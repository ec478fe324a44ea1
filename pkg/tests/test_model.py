import itertools

import numpy as np
import pytest

from aiba.domains import build_chain, build_domain
from aiba.model import (NO_ACTION, FactoredPosg, FactorSpec, LocalModelSpec, ModelError,
                        RewardSpec, dset_update, initial_local_distribution, local_cpt_rows,
                        model_from_dict, transition_prob, validate_model, y_index, y_values)


def _coin_model(**kw):
    factors = (FactorSpec("c", 2, (("c", 1),)),)
    cpds = {"c": np.array([[0.7, 0.3], [0.2, 0.8]])}
    args = dict(name="coin", factors=factors, cpds=cpds, action_name="a", actions=("x",),
                reward=RewardSpec(("c'",), np.array([0.0, 1.0])), horizon=2,
                initial=(((0,), 1.0),))
    args.update(kw)
    return FactoredPosg(**args)


def test_valid_domains_pass_validation():
    for name in ("rover", "traffic", "firefighters", "guess"):
        model, local = build_domain(name)
        assert validate_model(model, local).ok


def test_dangling_parent_reported():
    m = _coin_model(factors=(FactorSpec("c", 2, (("ghost", 1),)),))
    rep = validate_model(m)
    assert any("dangling parent ghost" in v for v in rep.violations)
    with pytest.raises(ModelError):
        rep.raise_if_invalid()


def test_unnormalized_row_reported():
    m = _coin_model(cpds={"c": np.array([[0.7, 0.2], [0.2, 0.8]])})
    assert any("not normalized" in v for v in validate_model(m).violations)


def test_wrong_cpt_shape_reported():
    m = _coin_model(cpds={"c": np.array([0.5, 0.5])})
    assert any("CPT shape" in v for v in validate_model(m).violations)


def test_bad_initial_reported():
    m = _coin_model(initial=(((0,), 0.5),))
    assert any("initial distribution" in v for v in validate_model(m).violations)


def test_local_with_nonlocal_reward_rejected():
    model, _ = build_domain("rover")
    bad = LocalModelSpec(("pos",), ("pl",), ("a_sat",), ("pl",), "a")
    assert validate_model(model, bad).ok
    reward_on_charge = FactoredPosg(
        model.name, model.factors, model.cpds, "a", model.actions,
        RewardSpec(("charge",), np.zeros(4)), model.horizon, model.initial, model.other_policies)
    assert any("non-local" in v for v in validate_model(reward_on_charge, bad).violations)


def test_transition_prob_matches_cpt_product():
    model, _ = build_domain("firefighters")
    s, a2, a = (1, 0, 0), 0, 1
    # a=1 fights house 2, a2=0 also fights house 2: house 2 goes out w.p. 1,
    # house 1 stays burning, house 3 ignites from house 2 w.p. 0.9
    assert transition_prob(model, s, {"a": a, "a2": a2}, (1, 0, 1)) == pytest.approx(0.0)
    s = (1, 1, 0)
    assert transition_prob(model, s, {"a": a, "a2": a2}, (1, 0, 1)) == pytest.approx(0.9)
    assert transition_prob(model, s, {"a": a, "a2": a2}, (1, 0, 0)) == pytest.approx(0.1)


@pytest.mark.parametrize("name", ["rover", "traffic", "firefighters", "guess"])
def test_joint_next_is_a_distribution(name):
    model, _ = build_domain(name)
    cm = model.compiled
    for s, _ in model.initial:
        for a in range(model.n_actions):
            assert sum(p for p, _ in cm.joint_next(s, a)) == pytest.approx(1.0, abs=1e-12)


def test_transition_prob_rejects_bad_input():
    model, _ = build_domain("firefighters")
    with pytest.raises(ModelError):
        transition_prob(model, (0, 0), {"a": 0}, (0, 0, 0))
    with pytest.raises(ModelError):
        transition_prob(model, (0, 0, 0), {"a": 5}, (0, 0, 0))
    with pytest.raises(ModelError):
        transition_prob(model, (0, 0, 0), {"a": 0, "nobody": 1}, (0, 0, 0))


def test_dset_records():
    local = LocalModelSpec(("x1",), ("x2",), ("y",), ("x1", "a", "x2"), "a")
    d = dset_update(local, (), (1, 0), 0)
    assert d == ((1, NO_ACTION, 0),)
    d = dset_update(local, d, (0, 1), 1)
    assert d == ((1, NO_ACTION, 0), (0, 1, 1))


def test_y_index_roundtrip():
    cards = (2, 3, 2)
    for i, vals in enumerate(itertools.product(*[range(c) for c in cards])):
        assert y_index(vals, cards) == i
        assert y_values(i, cards) == vals


def test_local_cpt_rows_shapes(rover):
    model, local = rover
    rows = local_cpt_rows(model, local, (0, 1), 1)
    assert [r.shape for r in rows] == [(2, 6), (2, 2)]
    # pl' copies a_sat
    np.testing.assert_array_equal(rows[1], np.eye(2))
    np.testing.assert_allclose(rows[0].sum(axis=1), 1.0)


def test_initial_local_distribution(rover):
    model, local = rover
    assert initial_local_distribution(model, local) == pytest.approx({(0, 0): 1.0})


def test_model_from_dict_matches_builder():
    cfg = {
        "name": "coin", "horizon": 2, "action": {"name": "a", "values": ["x"]},
        "factors": [{"name": "c", "cardinality": 2, "parents": [["c", 1]],
                     "cpt": [[0.7, 0.3], [0.2, 0.8]]}],
        "initial": [{"state": [0], "prob": 1.0}],
        "reward": {"scope": ["c'"], "table": [0.0, 1.0]},
        "local": {"x_int": ["c"], "dset": ["c"]},
    }
    model, local = model_from_dict(cfg)
    assert validate_model(model, local).ok
    assert transition_prob(model, (1,), {"a": 0}, (1,)) == pytest.approx(0.8)


def test_chain_is_deterministic():
    model, _ = build_chain(horizon=3)
    assert model.compiled.joint_next((0,), 0) == [(1.0, (1,))]
