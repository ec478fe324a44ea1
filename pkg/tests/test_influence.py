import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiba.domains import GuessConfig, build_domain, build_guess
from aiba.influence import (ConstantInfluence, TableInfluence, UnreachableQueryError, clamp,
                            deduce_exact_influence, dump_exact, fit_empirical, load_exact,
                            perturb)
from aiba.simulator import InfluenceDataset, collect_dataset


def _toy_dataset(rows):
    """One-step dataset from (record, y) pairs."""
    rec = np.array([[[r]] for r, _ in rows], dtype=np.int64)
    y = np.array([[v] for _, v in rows], dtype=np.int64)
    return InfluenceDataset(rec, y, 2)


def test_empirical_frequencies():
    ds = _toy_dataset([(0, 0), (0, 0), (0, 0), (0, 1), (1, 1)])
    emp = fit_empirical(ds)
    np.testing.assert_allclose(emp.predict(1, ((0,),)), [0.75, 0.25])
    np.testing.assert_allclose(emp.predict(1, ((1,),)), [0.0, 1.0])
    assert emp.support(1, ((0,),)) == 4


def test_empirical_laplace():
    ds = _toy_dataset([(0, 0), (0, 0), (0, 0), (0, 1)])
    np.testing.assert_allclose(fit_empirical(ds, 1.0).predict(1, ((0,),)), [4 / 6, 2 / 6])


def test_empirical_unseen_is_uniform():
    emp = fit_empirical(_toy_dataset([(0, 0)]))
    np.testing.assert_allclose(emp.predict(1, ((7,),)), [0.5, 0.5])
    assert emp.support(1, ((7,),)) == 0


def test_empirical_rejects_negative_smoothing():
    with pytest.raises(ValueError):
        fit_empirical(_toy_dataset([(0, 0)]), -1.0)


def test_guess_influence_closed_form(guess):
    # src ~ Bern(0.6), persists w.p. 0.8; obs copies src with 10% flips
    model, local = guess
    inf = deduce_exact_influence(model, local)
    for o in (0, 1):
        np.testing.assert_allclose(inf.predict(1, ((o,),)), [0.4, 0.6], atol=1e-12)
    post1 = 0.6 * 0.9 / (0.6 * 0.9 + 0.4 * 0.1)
    post0 = 0.6 * 0.1 / (0.6 * 0.1 + 0.4 * 0.9)
    for o1 in (0, 1):
        for o2, post in ((1, post1), (0, post0)):
            p = 0.8 * post + 0.2 * (1 - post)
            np.testing.assert_allclose(inf.predict(2, ((o1,), (o2,))), [1 - p, p], atol=1e-12)
    assert inf.n_dsets() == 4


def test_point_mass_collapse():
    # a noiseless copy of a frozen source reveals it exactly
    model, local = build_guess(GuessConfig(horizon=3, stickiness=1.0, obs_noise=0.0))
    inf = deduce_exact_influence(model, local)
    for t, d in inf.reachable():
        if t >= 2:
            np.testing.assert_array_equal(inf.predict(t, d), np.eye(2)[d[-1][0]])


def test_uniform_satellite_gives_constant_influence():
    model, local = build_domain("rover", satellite_policy="uniform-random")
    inf = deduce_exact_influence(model, local)
    for t, d in inf.reachable():
        np.testing.assert_allclose(inf.predict(t, d), [0.5, 0.5], atol=1e-12)


@pytest.mark.parametrize("name", ["rover", "firefighters", "traffic"])
def test_exact_rows_and_weights(name):
    model, local = build_domain(name)
    inf = deduce_exact_influence(model, local)
    for t in range(1, model.horizon + 1):
        assert sum(inf.weight[t].values()) == pytest.approx(1.0, abs=1e-9)
        for p in inf.table[t].values():
            assert p.sum() == pytest.approx(1.0, abs=1e-12)
            assert (p >= 0).all()


@settings(max_examples=30, deadline=None)
@given(stick=st.floats(0, 1), noise=st.floats(0, 1), prior=st.floats(0, 1),
       h=st.integers(1, 4))
def test_guess_influence_is_stochastic(stick, noise, prior, h):
    model, local = build_guess(GuessConfig(horizon=h, stickiness=stick, obs_noise=noise,
                                           src_prior=prior))
    inf = deduce_exact_influence(model, local)
    for t, d in inf.reachable():
        assert inf.predict(t, d).sum() == pytest.approx(1.0, abs=1e-9)


def test_unreachable_query(rover):
    inf = deduce_exact_influence(*rover)
    with pytest.raises(UnreachableQueryError):
        inf.predict(1, ((1,),))  # the satellite never plans before step 1
    with pytest.raises(ValueError):
        inf.predict(2, ((0,),))


def test_exact_dump_roundtrip(tmp_path, firefighters):
    inf = deduce_exact_influence(*firefighters)
    dump_exact(inf, tmp_path / "e.txt")
    back = load_exact(tmp_path / "e.txt", inf.n_y, inf.horizon)
    for t, d in inf.reachable():
        np.testing.assert_array_equal(back.predict(t, d), inf.predict(t, d))
    assert "np.float64" not in (tmp_path / "e.txt").read_text()


def test_empirical_approaches_exact(guess):
    model, local = guess
    inf = deduce_exact_influence(model, local)
    emp = fit_empirical(collect_dataset(model, local, None, 40000, seed=5))
    for t, d in inf.reachable():
        n = emp.support(t, d)
        assert n > 1000
        assert np.abs(emp.predict(t, d) - inf.predict(t, d)).max() < 4 * np.sqrt(0.25 / n)


def test_predict_dataset_matches_pointwise(firefighters):
    model, local = firefighters
    inf = deduce_exact_influence(model, local)
    ds = collect_dataset(model, local, None, 50, seed=2)
    P = inf.predict_dataset(ds)
    for k in (0, 17, 49):
        for t in range(1, ds.horizon + 1):
            d = tuple(map(tuple, ds.records[k, :t].tolist()))
            np.testing.assert_array_equal(P[k, t - 1], inf.predict(t, d))


def test_perturb_keeps_rows_stochastic(rover):
    inf = deduce_exact_influence(*rover)
    same = perturb(inf, 0.0, seed=1)
    noisy = perturb(inf, 0.5, seed=1)
    for t, d in inf.reachable():
        np.testing.assert_allclose(same.predict(t, d), inf.predict(t, d))
        assert noisy.predict(t, d).sum() == pytest.approx(1.0)


def test_table_influence_fallback():
    tab = TableInfluence({1: {((0,),): np.array([1.0, 0.0])}}, 2, 1)
    with pytest.raises(UnreachableQueryError):
        tab.predict(1, ((1,),))
    tab.fallback = np.array([0.5, 0.5])
    np.testing.assert_allclose(tab.predict(1, ((1,),)), [0.5, 0.5])


def test_constant_influence():
    c = ConstantInfluence(np.array([0.2, 0.8]), horizon=3)
    assert c.n_y == 2
    np.testing.assert_allclose(c.predict(3, ((0,),) * 3), [0.2, 0.8])


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6).filter(lambda v: sum(v) > 0))
def test_clamp_is_a_distribution(v):
    p = np.array(v) / sum(v)
    q = clamp(p)
    assert q.sum() == pytest.approx(1.0)
    assert q.min() > 0
