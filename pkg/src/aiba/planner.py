"""Influence-augmented local MDPs, value iteration and best-response oracles."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .influence import Influence
from .model import (CapacityError, FactoredPosg, LocalModelSpec, initial_local_distribution,
                    local_cpt_rows)
from .simulator import HistoryPolicy, Policy, _tok, evaluate_policy_exact

log = logging.getLogger(__name__)

DEFAULT_IALM_CAP = 10**6
DEFAULT_BRUTE_CAP = 10**6


@dataclass(frozen=True)
class AugmentedState:
    t: int
    x: tuple
    d: tuple


@dataclass
class LayerArcs:
    """Transitions of one layer and one action as flat arrays."""

    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    reward: np.ndarray


@dataclass
class Ialm:
    """``states[t-1]`` lists the (x, d) pairs reachable at step t (t = 1..h+1);
    ``arcs[t-1][a]`` holds the transitions from layer t to t+1."""

    states: list[list[tuple]]
    arcs: list[list[LayerArcs]]
    initial: list[tuple[int, float]]
    horizon: int
    n_actions: int
    influence: Influence | None = field(default=None, repr=False)
    model: FactoredPosg | None = field(default=None, repr=False)
    local: LocalModelSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        self.index = [{s: i for i, s in enumerate(layer)} for layer in self.states]

    @property
    def n_states(self) -> int:
        return sum(len(layer) for layer in self.states)

    def row(self, t: int, state: tuple, a: int) -> dict:
        """{(x', d'): prob} for one (s, a) pair."""
        i = self.index[t - 1][state]
        arc = self.arcs[t - 1][a]
        sel = arc.src == i
        nxt = self.states[t]
        return {nxt[j]: float(p) for j, p in zip(arc.dst[sel], arc.prob[sel])}

    def summary(self) -> str:
        return "\n".join(f"layer {t + 1}: {len(layer)} states"
                         for t, layer in enumerate(self.states))


def _local_reward_fn(model: FactoredPosg, local: LocalModelSpec):
    lpos = {n: i for i, n in enumerate(local.factors)}
    scope = model.reward.scope
    table = model.reward.table

    def reward(x, a, x2):
        idx = []
        for name in scope:
            if name == model.action_name:
                idx.append(a)
            elif name.endswith("'"):
                idx.append(x2[lpos[name[:-1]]])
            else:
                idx.append(x[lpos[name]])
        return float(table[tuple(idx)])

    return reward


def local_successors(model: FactoredPosg, local: LocalModelSpec, x: tuple, a: int,
                     iy: np.ndarray) -> list[tuple[float, tuple]]:
    """[(prob, x')] under the mixture sum_y T(x'|x, y, a) I(y)."""
    rows = local_cpt_rows(model, local, x, a)
    # acc[y, v1, v2, ...] grows one factor at a time; y is summed out last
    acc = np.asarray(iy, dtype=float).reshape(-1)
    for r in rows:
        acc = acc[..., None] * r.reshape((r.shape[0],) + (1,) * (acc.ndim - 1) + (r.shape[1],))
    marg = acc.sum(axis=0)
    nz = np.argwhere(marg > 0)
    return [(float(marg[tuple(v)]), tuple(int(u) for u in v)) for v in nz]


def build_ialm(model: FactoredPosg, local: LocalModelSpec, influence: Influence,
               cap: int = DEFAULT_IALM_CAP) -> Ialm:
    h, n_a = model.horizon, model.n_actions
    reward = _local_reward_fn(model, local)
    init = initial_local_distribution(model, local)
    layer = [(x, local.initial_dset(x)) for x in sorted(init)]
    states = [layer]
    initial = [(i, init[x]) for i, (x, _) in enumerate(layer)]
    arcs = []
    total = len(layer)
    for t in range(1, h + 1):
        nxt_index: dict = {}
        nxt_states: list = []
        per_a = [([], [], [], []) for _ in range(n_a)]
        for i, (x, d) in enumerate(layer):
            iy = influence.predict(t, d)
            for a in range(n_a):
                src, dst, prob, rew = per_a[a]
                for p, x2 in local_successors(model, local, x, a, iy):
                    key = (x2, local.dset_update(d, x2, a))
                    j = nxt_index.get(key)
                    if j is None:
                        j = nxt_index[key] = len(nxt_states)
                        nxt_states.append(key)
                    src.append(i)
                    dst.append(j)
                    prob.append(p)
                    rew.append(reward(x, a, x2))
        total += len(nxt_states)
        if total > cap:
            raise CapacityError(f"IALM exceeds {cap} augmented states")
        arcs.append([LayerArcs(np.array(s, dtype=np.int64), np.array(d, dtype=np.int64),
                               np.array(p), np.array(r)) for s, d, p, r in per_a])
        states.append(nxt_states)
        layer = nxt_states
    return Ialm(states, arcs, initial, h, n_a, influence, model, local)


@dataclass
class ValueTable:
    values: list[np.ndarray]  # values[t-1][i], t = 1..h+1

    def __call__(self, ialm: Ialm, s: AugmentedState) -> float:
        return float(self.values[s.t - 1][ialm.index[s.t - 1][(s.x, s.d)]])


@dataclass
class LocalPolicy:
    """Deterministic map from (t, x, d) to an action."""

    table: dict[int, dict[tuple, int]]

    def action(self, t: int, x: tuple, d: tuple) -> int | None:
        return self.table.get(t, {}).get((x, d))


def q_values(ialm: Ialm, t: int, v_next: np.ndarray) -> np.ndarray:
    n = len(ialm.states[t - 1])
    q = np.empty((n, ialm.n_actions))
    for a, arc in enumerate(ialm.arcs[t - 1]):
        q[:, a] = np.bincount(arc.src, weights=arc.prob * (arc.reward + v_next[arc.dst]),
                              minlength=n)
    return q


def value_iteration(ialm: Ialm) -> tuple[ValueTable, LocalPolicy, float]:
    """Backward induction; ties go to the lowest action index."""
    h = ialm.horizon
    values = [None] * (h + 1)
    values[h] = np.zeros(len(ialm.states[h]))
    table = {}
    for t in range(h, 0, -1):
        q = q_values(ialm, t, values[t])
        best = q.argmax(axis=1)
        values[t - 1] = q[np.arange(len(best)), best]
        table[t] = {s: int(a) for s, a in zip(ialm.states[t - 1], best)}
    v0 = float(sum(p * values[0][i] for i, p in ialm.initial))
    return ValueTable(values), LocalPolicy(table), v0


def evaluate_in_ialm(ialm: Ialm, policy: LocalPolicy, fallback: int = 0) -> float:
    """Value of a fixed local policy inside an IALM."""
    h = ialm.horizon
    v = np.zeros(len(ialm.states[h]))
    for t in range(h, 0, -1):
        q = q_values(ialm, t, v)
        acts = np.array([policy.table.get(t, {}).get(s, fallback) for s in ialm.states[t - 1]],
                        dtype=np.int64)
        v = q[np.arange(len(acts)), acts]
    return float(sum(p * v[i] for i, p in ialm.initial))


class ExecutedPolicy(Policy):
    """A local policy run online in the global model; unknown (x, d) pairs
    fall back to action 0 and are counted."""

    def __init__(self, local_policy: LocalPolicy, n_actions: int, fallback: int = 0):
        self.local_policy = local_policy
        self.n_actions = n_actions
        self.fallback = fallback
        self.misses = 0
        self._eye = np.eye(n_actions)

    def probs(self, t, x, d, history=None):
        a = self.local_policy.action(t, x, d)
        if a is None:
            if self.misses == 0:
                log.warning("local policy undefined at t=%d x=%s; using action %d",
                            t, x, self.fallback)
            self.misses += 1
            a = self.fallback
        return self._eye[a]


def execute_local_policy(policy: LocalPolicy, local: LocalModelSpec | None = None,
                         n_actions: int | None = None) -> ExecutedPolicy:
    if n_actions is None:
        n_actions = 1 + max((a for layer in policy.table.values() for a in layer.values()),
                            default=0)
    return ExecutedPolicy(policy, n_actions)


# -- best-response oracles -----------------------------------------------------


def _history_tree(model: FactoredPosg, local: LocalModelSpec, cap: int):
    """Expectimax over local action-observation histories with exact beliefs
    over the global state; returns (value, {history: action}, node count)."""
    cm = model.compiled
    lidx = [cm.pos[f] for f in local.factors]
    h, n_a = model.horizon, model.n_actions
    nodes = 0
    plan: dict = {}

    def solve(t, hist, alpha):
        nonlocal nodes
        nodes += 1
        if nodes > cap:
            raise CapacityError(f"best-response search exceeds {cap} history nodes")
        best, best_a = -np.inf, 0
        for a in range(n_a):
            val = 0.0
            split: dict = {}
            for s, w in alpha.items():
                for q, s2 in cm.joint_next(s, a):
                    val += w * q * cm.reward(s, a, s2)
                    if t < h:
                        x2 = tuple(s2[i] for i in lidx)
                        bucket = split.setdefault(x2, {})
                        bucket[s2] = bucket.get(s2, 0.0) + w * q
            for x2 in sorted(split):
                val += solve(t + 1, hist + (a, x2), split[x2])
            if val > best + 1e-12:
                best, best_a = val, a
        plan[hist] = best_a
        return best

    roots: dict = {}
    for s, p in model.initial:
        x = tuple(s[i] for i in lidx)
        bucket = roots.setdefault(x, {})
        bucket[s] = bucket.get(s, 0.0) + p
    value = sum(solve(1, (x,), roots[x]) for x in sorted(roots))
    return value, plan, nodes


def _reachable_histories(model, local, cap):
    cm = model.compiled
    lidx = [cm.pos[f] for f in local.factors]
    layer = {}
    for s, p in model.initial:
        x = tuple(s[i] for i in lidx)
        layer.setdefault((x,), set()).add(s)
    out = []
    for t in range(1, model.horizon + 1):
        out.extend(sorted(layer))
        if len(out) > cap:
            raise CapacityError(f"more than {cap} local histories")
        if t == model.horizon:
            break
        nxt: dict = {}
        for hist, ss in layer.items():
            for s in ss:
                for a in range(model.n_actions):
                    for _, s2 in cm.joint_next(s, a):
                        x2 = tuple(s2[i] for i in lidx)
                        nxt.setdefault(hist + (a, x2), set()).add(s2)
        layer = nxt
    return out


def brute_force_best_response(model: FactoredPosg, local: LocalModelSpec,
                              cap: int = DEFAULT_BRUTE_CAP, method: str = "expectimax",
                              return_policy: bool = False):
    """Exact best-response value against the fixed policies of the others.

    ``expectimax`` searches the tree of local histories; ``enumerate``
    evaluates every deterministic history-based policy (tiny models only).
    """
    if method == "expectimax":
        value, plan, _ = _history_tree(model, local, cap)
        policy = HistoryPolicy(plan, model.n_actions)
    elif method == "enumerate":
        hists = _reachable_histories(model, local, cap)
        n_pol = model.n_actions ** len(hists)
        if n_pol > cap:
            raise CapacityError(f"{n_pol} deterministic policies exceed the cap {cap}")
        value, policy = -np.inf, None
        for choice in itertools.product(range(model.n_actions), repeat=len(hists)):
            pol = HistoryPolicy(dict(zip(hists, choice)), model.n_actions)
            v = evaluate_policy_exact(model, local, pol)
            if v > value + 1e-12:
                value, policy = v, pol
    else:
        raise ValueError(f"unknown method {method!r}")
    return (value, policy) if return_policy else value


# -- text dumps ----------------------------------------------------------------


def _state_str(x, d):
    return f"{'.'.join(map(str, x))}|{' '.join(_tok(r) for r in d)}"


def dump_ialm(ialm: Ialm, path: str | Path) -> None:
    """One ``t,state,action,next_state,prob,reward`` line per transition."""
    with open(path, "w") as fh:
        fh.write(ialm.summary() + "\n")
        for t in range(1, ialm.horizon + 1):
            cur, nxt = ialm.states[t - 1], ialm.states[t]
            for a, arc in enumerate(ialm.arcs[t - 1]):
                for i, j, p, r in zip(arc.src, arc.dst, arc.prob, arc.reward):
                    fh.write(f"{t},{_state_str(*cur[i])},{a},{_state_str(*nxt[j])},{float(p)!r},{float(r)!r}\n")


def dump_policy(policy: LocalPolicy, path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in sorted(policy.table):
            for (x, d), a in policy.table[t].items():
                fh.write(f"{t},{_state_str(x, d)},{a}\n")
