"""Acceptance checks. Each prints one PASS/FAIL line; run with ``-s`` to see them.

The full-size runs (rover and fire fighters learning curves) are marked
``slow`` and shared between the checks that read them.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from aiba.bounds import (bound_constant, error_estimates, hoeffding_confidence, kl_from,
                         prob_bound, transition_gap_check)
from aiba.domains import build_domain
from aiba.experiment import ExperimentConfig, read_report, run_experiment
from aiba.influence import (ConstantInfluence, EmpiricalInfluence, deduce_exact_influence,
                            perturb)
from aiba.neural import init_params, loss_and_grad
from aiba.planner import (brute_force_best_response, build_ialm, execute_local_policy,
                          value_iteration)
from aiba.simulator import collect_dataset, evaluate_policy_exact

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'} [{n}] {name}: {detail}")
    assert ok, f"criterion {n} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def rover_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("rover_run")
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig.load(CONFIGS / "rover.yaml"), out)
    return out, rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ff_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ff_run")
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig.load(CONFIGS / "firefighters.yaml"), out)
    return out, rep, time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------


@pytest.mark.parametrize("domain,grid", [
    ("rover", [dict(track_length=L, horizon=h) for L in (1, 2, 3) for h in (1, 2, 3, 4)]),
    ("firefighters", [dict(horizon=h) for h in (1, 2, 3)]),
])
def test_lossless_exact_influence(domain, grid):
    t0 = time.perf_counter()
    worst = 0.0
    for kw in grid:
        model, local = build_domain(domain, **kw)
        exact = deduce_exact_influence(model, local)
        _, _, v_ialm = value_iteration(build_ialm(model, local, exact))
        worst = max(worst, abs(v_ialm - brute_force_best_response(model, local)))
    secs = time.perf_counter() - t0
    verdict(1, f"losslessness ({domain})", worst <= 1e-9 and secs <= 120,
            f"{len(grid)} instances, max |V_ialm - V_br| = {worst:.2e}, {secs:.1f}s")


# 2 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_bound_soundness(rover_run):
    out, _, secs = rover_run
    rows = read_report(out / "report.csv")
    bad = [r for r in rows
           if r["loss"] > r["l1_bound"] + 1e-12 or r["loss"] > r["kl_bound"] + 1e-12]
    slack = min(min(r["l1_bound"], r["kl_bound"]) - r["loss"] for r in rows)
    verdict(2, "bound soundness (rover)", not bad and secs <= 600,
            f"{len(rows)} checkpoints, {len(bad)} violations, min slack {slack:.3f}, "
            f"run {secs:.0f}s")


# 3 ---------------------------------------------------------------------------


def _random_distribution(rng, k):
    p = rng.dirichlet(np.full(k, rng.choice([0.1, 0.5, 1.0, 5.0])))
    if rng.random() < 0.3:  # knock out some entries
        p[rng.random(k) < 0.4] = 0.0
        if p.sum() == 0:
            p[rng.integers(k)] = 1.0
        p = p / p.sum()
    return p


def test_pinsker_ordering():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    model, local = build_domain("rover")
    exact = deduce_exact_influence(model, local)
    keys = list(exact.reachable())
    n, bad, worst = 10_000, 0, -np.inf
    for i in range(n):
        if i % 2:  # random pair of distributions
            k = int(rng.integers(2, 9))
            p, q = _random_distribution(rng, k), _random_distribution(rng, k)
        else:  # exact rover influence against a perturbed copy at a random d-set
            t, d = keys[rng.integers(len(keys))]
            p = exact.predict(t, d)
            q = perturb(exact, float(rng.random()), int(rng.integers(1 << 30))).predict(t, d) \
                if i % 50 == 0 else 0.5 * p + 0.5 * _random_distribution(rng, 2)
        l1 = float(np.abs(p - q).sum())
        gap = l1 - math.sqrt(2 * kl_from(p, q))
        worst = max(worst, gap)
        bad += gap > 1e-9
    secs = time.perf_counter() - t0
    verdict(3, "Pinsker ordering", bad == 0 and secs <= 60,
            f"{n} triples, {bad} violations, max(l1 - sqrt(2 kl)) = {worst:.3e}, {secs:.1f}s")


# 4 ---------------------------------------------------------------------------


def test_transition_row_inequality():
    t0 = time.perf_counter()
    model, local = build_domain("rover")
    exact = deduce_exact_influence(model, local)
    ialm = build_ialm(model, local, exact)
    rows = viol = 0
    slack = -np.inf
    for scale, seed in ((0.05, 0), (0.3, 1), (1.0, 2)):
        noisy = perturb(exact, scale, seed)
        rep = transition_gap_check(ialm, build_ialm(model, local, noisy), exact, noisy)
        rows += rep.rows
        viol += rep.violations
        slack = max(slack, rep.max_slack)
    secs = time.perf_counter() - t0
    verdict(4, "transition row inequality (rover h=6)", viol == 0 and secs <= 120,
            f"{rows} (state, action) rows, {viol} violations, "
            f"max(row gap - influence gap) = {slack:.2e}, {secs:.1f}s")


# 5 ---------------------------------------------------------------------------


def test_sample_bound_calibration():
    t0 = time.perf_counter()
    model, local = build_domain("guess")
    exact = deduce_exact_influence(model, local)
    keys = list(exact.reachable())
    n, eps, reps = 2000, 0.1, 10_000
    n_dh = exact.n_dsets()
    assert exact.n_y == 2 and model.horizon == 2 and n_dh <= 4

    approx = perturb(exact, 0.6, seed=11)
    v_star = value_iteration(build_ialm(model, local, exact))[2]
    _, pol, _ = value_iteration(build_ialm(model, local, approx))
    loss = v_star - evaluate_policy_exact(model, local, execute_local_policy(pol, local, 2))

    rng = np.random.default_rng(5)
    counts = {k: rng.multinomial(n, exact.predict(*k), size=reps).astype(float) for k in keys}
    gap = np.max([np.abs(counts[k] / n - approx.predict(*k)).sum(axis=1) for k in keys], axis=0)
    c = bound_constant(model.horizon, model.reward.max_abs)
    bound = c * (gap + eps)
    literal = c * gap + eps

    # the vectorized bound agrees with prob_bound on a few resamples
    for j in range(5):
        emp = EmpiricalInfluence({t: {} for t in (1, 2)}, 2, 2)
        for (t, d) in keys:
            emp.counts[t][d] = counts[(t, d)][j]
        pb = prob_bound(model, emp, approx, n, eps, dsets=keys)
        assert pb.bound == pytest.approx(bound[j]) and pb.bound_literal == pytest.approx(literal[j])

    conf = hoeffding_confidence(model.horizon, n_dh, exact.n_y, n, eps)
    assert conf == pytest.approx(1 - 16 * math.exp(-10), abs=1e-12)
    sigma = math.sqrt(conf * (1 - conf) / reps)
    freq = float(np.mean(loss <= bound))
    freq_literal = float(np.mean(loss <= literal))
    close = max(np.abs(counts[k] / n - exact.predict(*k)).sum(axis=1).max() for k in keys)
    secs = time.perf_counter() - t0
    ok = freq >= conf - 3 * sigma and freq_literal >= conf - 3 * sigma and secs <= 600
    verdict(5, "sample-based bound calibration (guess toy)", ok,
            f"loss {loss:.4f}, confidence {conf:.5f}, coverage {freq:.5f} "
            f"(literal form {freq_literal:.5f}), max ||I_emp - I||_1 {close:.4f}, "
            f"{reps} resamples, {secs:.1f}s")


# 6 ---------------------------------------------------------------------------


def _inversions(series):
    return int(np.sum(np.diff(series) >= 0))


@pytest.mark.slow
def test_rover_learning_curves(rover_run):
    _, rep, secs = rover_run
    ce, n1 = rep.series("error_ce"), rep.series("error_norm1")
    value = rep.series("value_achieved")
    v_opt = rep.rows[0]["value_optimal"]
    ep = np.array(rep.epochs())
    late = ep >= 6
    gap_late = float(np.max(v_opt - value[late]))
    a = _inversions(ce) <= 1 and _inversions(n1) <= 1 and ce[-1] < ce[0] and n1[-1] < n1[0]
    b = gap_late <= 0.1
    c = rep.pearson_ce is not None and rep.pearson_ce >= 0.5
    d = rep.pearson_norm1 is not None and rep.pearson_norm1 >= 0.5
    verdict(6, "rover learning curves", a and b and c and d and secs <= 1800,
            f"(a) ce {ce[0]:.4f}->{ce[-1]:.4f} with {_inversions(ce)} inversions, "
            f"norm1 {n1[0]:.4f}->{n1[-1]:.4f} with {_inversions(n1)}; "
            f"(b) max V*-V from epoch 6 = {gap_late:.4f}; "
            f"(c) r_ce = {rep.pearson_ce:.3f}; (d) r_norm1 = {rep.pearson_norm1:.3f}; "
            f"{len(rep.summary)} epochs x {rep.summary[0]['n']} iterations, {secs:.0f}s")


# 7 ---------------------------------------------------------------------------


def _tolerance(rep, i, j, key):
    """Two standard errors of the difference of two checkpoint means; the
    per-checkpoint error combines spread across iterations and MC error."""
    def se2(k):
        s = rep.summary[k]
        mc = np.array([r["value_se"] for r in rep.rows if r["epoch"] == s["epoch"]]) \
            if key == "value_achieved" else np.zeros(1)
        return s[f"{key}_se"] ** 2 + float(np.mean(mc ** 2)) / s["n"]
    return 2.0 * math.sqrt(se2(i) + se2(j))


@pytest.mark.slow
def test_firefighters_learning_curves(ff_run):
    _, rep, secs = ff_run
    ep = rep.epochs()
    v, ce, n1 = (rep.series(k) for k in ("value_achieved", "error_ce", "error_norm1"))
    drops = [(ep[i], ep[i + 1], v[i] - v[i + 1], _tolerance(rep, i, i + 1, "value_achieved"))
             for i in range(len(ep) - 1)]
    rises = [(k, ep[i], ep[i + 1], s[i + 1] - s[i], _tolerance(rep, i, i + 1, k))
             for k, s in (("error_ce", ce), ("error_norm1", n1)) for i in range(len(ep) - 1)]
    bad_v = [x for x in drops if x[2] > x[3]]
    bad_e = [x for x in rises if x[3] > x[4]]
    detail = (f"checkpoints {ep}; value {', '.join(f'{x:.4f}' for x in v)}; "
              f"ce {', '.join(f'{x:.4f}' for x in ce)}; "
              f"norm1 {', '.join(f'{x:.4f}' for x in n1)}; "
              f"value drops beyond tolerance {[(a, b, round(float(d), 4), round(float(t), 4)) for a, b, d, t in bad_v]}; "
              f"error rises beyond tolerance {len(bad_e)}; {secs:.0f}s")
    verdict(7, "fire fighters learning curves", not bad_v and not bad_e and secs <= 2700,
            detail)


# 8 ---------------------------------------------------------------------------


def test_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    params = init_params(9, 6, 4, rng)
    for k in params:
        params[k] = params[k] + 0.2 * rng.standard_normal(params[k].shape)
    X = rng.integers(0, 9, size=(5, 6))
    Y = rng.integers(0, 4, size=(5, 6))
    _, grad = loss_and_grad(params, X, Y)
    names = list(params)
    worst = 0.0
    h = 1e-5
    for probe in range(10):
        k = names[probe % len(names)]
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        up = loss_and_grad(params, X, Y)[0]
        params[k][idx] = old - h
        down = loss_and_grad(params, X, Y)[0]
        params[k][idx] = old
        num = (up - down) / (2 * h)
        rel = abs(num - grad[k][idx]) / max(abs(num), abs(grad[k][idx]), 1e-8)
        worst = max(worst, rel)
    secs = time.perf_counter() - t0
    verdict(8, "gradient check", worst <= 1e-4 and secs <= 60,
            f"10 probes over {names}, max relative error {worst:.2e}, {secs:.2f}s")


# 9 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_determinism(rover_run, tmp_path):
    out, _, _ = rover_run
    run_experiment(ExperimentConfig.load(CONFIGS / "rover.yaml"), tmp_path)
    same = {name: (out / name).read_bytes() == (tmp_path / name).read_bytes()
            for name in ("report.csv", "summary.csv")}
    verdict(9, "determinism", all(same.values()),
            f"rover config run twice; byte-identical: {same}")


# 10 --------------------------------------------------------------------------


@pytest.mark.parametrize("domain", ["rover", "guess"])
def test_estimator_closed_forms(domain):
    model, local = build_domain(domain)
    ds = collect_dataset(model, local, None, 2000, seed=10)
    assert ds.n_y == 2
    t0 = time.perf_counter()
    est = error_estimates(ConstantInfluence(np.array([0.5, 0.5]), model.horizon), ds)
    secs = time.perf_counter() - t0
    ok = abs(est.error_ce - math.log(2)) <= 1e-9 and abs(est.error_norm1 - 1) <= 1e-9 and secs <= 1
    verdict(10, f"estimator closed forms ({domain})", ok,
            f"error_ce - ln 2 = {est.error_ce - math.log(2):.1e}, "
            f"error_norm1 - 1 = {est.error_norm1 - 1:.1e}, {secs * 1000:.1f}ms")
