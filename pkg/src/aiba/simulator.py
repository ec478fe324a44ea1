"""Seeded rollouts of the global model, influence datasets and policy evaluation.

Randomness comes from a Philox counter stream. Trajectory ``k`` owns a fixed
block of counters, so any contiguous range of trajectories can be regenerated
on its own (``start`` argument) and results never depend on how a run is
split into chunks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (NO_ACTION, CapacityError, FactoredPosg, LocalModelSpec,
                    y_cardinalities)

DEFAULT_EXACT_CAP = 10**7
CHUNK = 20000


class PolicyError(RuntimeError):
    """A protagonist policy was queried on a history it does not define."""


# -- protagonist policies ------------------------------------------------------


class Policy:
    """Maps the protagonist's information to a distribution over actions.

    ``probs`` receives the step ``t`` (1-based), the local state ``x``, the
    d-set ``d`` and, when ``uses_history`` is set, the full local history
    ``(x^1, a^1, ..., x^t)``.
    """

    uses_history = False
    fixed: np.ndarray | None = None

    def probs(self, t: int, x: tuple, d: tuple, history: tuple | None = None) -> np.ndarray:
        raise NotImplementedError


class UniformPolicy(Policy):
    def __init__(self, n_actions: int):
        self.fixed = np.full(n_actions, 1.0 / n_actions)

    def probs(self, t, x, d, history=None):
        return self.fixed


class HistoryPolicy(Policy):
    """Deterministic policy given as ``{history: action}``."""

    uses_history = True

    def __init__(self, table: dict, n_actions: int):
        self.table = table
        self.n_actions = n_actions

    def probs(self, t, x, d, history=None):
        try:
            a = self.table[history]
        except KeyError:
            raise PolicyError(f"policy undefined on history {history}") from None
        out = np.zeros(self.n_actions)
        out[a] = 1.0
        return out


# -- rng -----------------------------------------------------------------------


def slots_per_trajectory(model: FactoredPosg) -> int:
    cm = model.compiled
    n = 1 + model.horizon * (cm.n_aux + 1 + cm.n_state)
    return -(-n // 4) * 4


def trajectory_uniforms(seed: int, start: int, count: int, slots: int) -> np.ndarray:
    """Uniforms for trajectories ``start..start+count-1`` (one row each)."""
    bitgen = np.random.Philox(key=int(seed))
    bitgen.advance(start * (slots // 4))
    return np.random.Generator(bitgen).random((count, slots))


def _draw(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(rows, axis=1)
    v = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(v, rows.shape[1] - 1)


# -- batch simulation ----------------------------------------------------------


@dataclass
class Batch:
    """Arrays over ``n`` trajectories; step axis is 0-based (step t+1)."""

    states: np.ndarray   # (n, h+1, n_state)
    aux: np.ndarray      # (n, h, n_aux)
    actions: np.ndarray  # (n, h)
    rewards: np.ndarray  # (n, h)

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def simulate(model: FactoredPosg, local: LocalModelSpec, policy: Policy, n: int, seed: int,
             start: int = 0) -> Batch:
    """Roll out trajectories ``start..start+n-1`` of the seed's stream."""
    cm = model.compiled
    h, ns, na = model.horizon, cm.n_state, cm.n_aux
    slots = slots_per_trajectory(model)
    U = trajectory_uniforms(seed, start, n, slots)
    width = len(cm.slice_names)

    states = np.zeros((n, h + 1, ns), dtype=np.int64)
    aux = np.zeros((n, h, na), dtype=np.int64)
    actions = np.zeros((n, h), dtype=np.int64)
    rewards = np.zeros((n, h))

    init_p = np.array([p for _, p in model.initial])
    init_s = np.array([s for s, _ in model.initial], dtype=np.int64).reshape(len(init_p), ns)
    pick = _draw(np.broadcast_to(init_p, (n, len(init_p))), U[:, 0])
    states[:, 0] = init_s[pick]

    lidx = [cm.pos[f] for f in local.factors]
    track = policy.fixed is None
    if track:
        xs = [tuple(r) for r in states[:, 0][:, lidx].tolist()]
        ds = [local.initial_dset(x) for x in xs]
        hist = [(x,) for x in xs] if policy.uses_history else None

    col = 1
    for t in range(h):
        cur = np.zeros((n, width), dtype=np.int64)
        cur[:, :ns] = states[:, t]
        for i in cm.aux_order:
            tab = cm.tables[i]
            idx = tuple(cur[:, j] for _, j in cm.parents[i])
            cur[:, i] = _draw(tab[idx] if idx else np.broadcast_to(tab, (n, tab.shape[-1])),
                              U[:, col])
            col += 1
        if track:
            probs = np.array([policy.probs(t + 1, xs[k], ds[k], hist[k] if hist else None)
                              for k in range(n)])
        else:
            probs = np.broadcast_to(policy.fixed, (n, model.n_actions))
        cur[:, -1] = _draw(probs, U[:, col])
        col += 1
        nxt = np.zeros((n, width), dtype=np.int64)
        for i in cm.state_order:
            tab = cm.tables[i]
            idx = tuple((cur if lag else nxt)[:, j] for lag, j in cm.parents[i])
            nxt[:, i] = _draw(tab[idx] if idx else np.broadcast_to(tab, (n, tab.shape[-1])),
                              U[:, col])
            col += 1
        aux[:, t] = cur[:, ns:ns + na]
        actions[:, t] = cur[:, -1]
        states[:, t + 1] = nxt[:, :ns]
        ridx = tuple((nxt if is_next else cur)[:, j] for is_next, j in cm.reward_axes)
        rewards[:, t] = model.reward.table[ridx]
        if track and t + 1 < h:
            new_x = [tuple(r) for r in nxt[:, lidx].tolist()]
            acts = actions[:, t].tolist()
            for k in range(n):
                ds[k] = local.dset_update(ds[k], new_x[k], acts[k])
                if hist is not None:
                    hist[k] = hist[k] + (acts[k], new_x[k])
            xs = new_x
    return Batch(states, aux, actions, rewards)


def simulate_chunked(model, local, policy, n, seed, chunk=CHUNK):
    parts = [simulate(model, local, policy, min(chunk, n - s), seed, start=s)
             for s in range(0, n, chunk)]
    return Batch(*(np.concatenate([getattr(p, f) for p in parts])
                   for f in ("states", "aux", "actions", "rewards")))


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    other_actions: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return len(self.actions)


def rollout(model: FactoredPosg, local: LocalModelSpec, policy: Policy, seed: int,
            index: int = 0) -> Trajectory:
    b = simulate(model, local, policy, 1, seed, start=index)
    return Trajectory(b.states[0], b.actions[0], b.aux[0], b.rewards[0])


# -- influence datasets --------------------------------------------------------


@dataclass
class InfluenceDataset:
    """``records[k, t-1]`` is the d-set record of trajectory k at step t and
    ``y[k, t-1]`` the joint influence-source value (mixed radix index)."""

    records: np.ndarray  # (N, h, r) int
    y: np.ndarray        # (N, h) int
    n_y: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def horizon(self) -> int:
        return self.records.shape[1]

    def __len__(self) -> int:
        return self.records.shape[0] * self.records.shape[1]

    def iter_records(self):
        """Yields ``(t, dset, y)`` grouped by t."""
        for t in range(1, self.horizon + 1):
            for k in range(self.n):
                yield t, tuple(map(tuple, self.records[k, :t].tolist())), int(self.y[k, t - 1])


def extract_records(model: FactoredPosg, local: LocalModelSpec, batch: Batch):
    cm = model.compiled
    n, h = batch.actions.shape
    cols = []
    for name in local.dset_rule:
        if name == local.action:
            prev = np.full((n, h), NO_ACTION, dtype=np.int64)
            prev[:, 1:] = batch.actions[:, :-1]
            cols.append(prev)
        else:
            cols.append(batch.states[:, :h, cm.pos[name]])
    records = np.stack(cols, axis=2) if cols else np.zeros((n, h, 0), dtype=np.int64)
    cards = y_cardinalities(model, local)
    y = np.zeros((n, h), dtype=np.int64)
    for name, c in zip(local.y_src, cards):
        i = cm.pos[name]
        vals = batch.states[:, :h, i] if i < cm.n_state else batch.aux[:, :, i - cm.n_state]
        y = y * c + vals
    return records, y


def collect_dataset(model: FactoredPosg, local: LocalModelSpec, policy: Policy | None,
                    n: int, seed: int, domain: str | None = None) -> InfluenceDataset:
    if n < 1:
        raise ValueError("need at least one trajectory")
    policy = policy or UniformPolicy(model.n_actions)
    batch = simulate_chunked(model, local, policy, n, seed)
    records, y = extract_records(model, local, batch)
    n_y = int(np.prod(y_cardinalities(model, local))) if local.y_src else 1
    meta = {"domain": domain or model.name, "seed": int(seed), "N": int(n),
            "h": model.horizon, "policy": type(policy).__name__}
    return InfluenceDataset(records, y, n_y, meta)


def _tok(rec) -> str:
    return ".".join("_" if v == NO_ACTION else str(v) for v in rec)


def _untok(tok: str) -> tuple[int, ...]:
    return tuple(NO_ACTION if v == "_" else int(v) for v in tok.split(".")) if tok else ()


def save_dataset(ds: InfluenceDataset, path: str | Path) -> None:
    m = ds.meta
    with open(path, "w") as fh:
        fh.write("# influence-dataset v1\n")
        fh.write(f"domain={m.get('domain', '?')} seed={m.get('seed', 0)} N={ds.n} "
                 f"h={ds.horizon} r={ds.records.shape[2]} ny={ds.n_y} "
                 f"policy={m.get('policy', '?')}\n")
        for t in range(1, ds.horizon + 1):
            toks = [" ".join(_tok(r) for r in rows) for rows in ds.records[:, :t].tolist()]
            ys = ds.y[:, t - 1].tolist()
            fh.writelines(f"{t},{d},{y}\n" for d, y in zip(toks, ys))


def load_dataset(path: str | Path) -> InfluenceDataset:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != "# influence-dataset v1":
            raise ValueError(f"{path}: not an influence dataset (header {magic!r})")
        head = dict(kv.split("=", 1) for kv in fh.readline().split())
        n, h, r = int(head["N"]), int(head["h"]), int(head["r"])
        records = np.zeros((n, h, r), dtype=np.int64)
        y = np.zeros((n, h), dtype=np.int64)
        counts = [0] * (h + 1)
        for line in fh:
            t_s, d_s, y_s = line.rstrip("\n").split(",")
            t = int(t_s)
            k = counts[t]
            counts[t] += 1
            toks = d_s.split(" ")
            if len(toks) != t:
                raise ValueError(f"{path}: record with t={t} has {len(toks)} d-set tokens")
            records[k, t - 1] = _untok(toks[-1])
            y[k, t - 1] = int(y_s)
    if any(c != n for c in counts[1:]):
        raise ValueError(f"{path}: expected {n} records per step, got {counts[1:]}")
    meta = {"domain": head.get("domain"), "seed": int(head["seed"]), "N": n, "h": h,
            "policy": head.get("policy")}
    return InfluenceDataset(records, y, int(head["ny"]), meta)


# -- policy evaluation ---------------------------------------------------------


def evaluate_policy_mc(model: FactoredPosg, local: LocalModelSpec, policy: Policy, m: int,
                       seed: int) -> tuple[float, float]:
    """Mean return over ``m`` rollouts and its standard error."""
    if m < 2:
        raise ValueError("need at least two rollouts for a standard error")
    ret = simulate_chunked(model, local, policy, m, seed).returns
    return float(ret.mean()), float(ret.std(ddof=1) / np.sqrt(m))


def evaluate_policy_exact(model: FactoredPosg, local: LocalModelSpec, policy: Policy,
                          cap: int = DEFAULT_EXACT_CAP) -> float:
    """Exact expected return by forward propagation over (state, information)."""
    cm = model.compiled
    lidx = [cm.pos[f] for f in local.factors]
    layer: dict = {}
    for s, p in model.initial:
        x = tuple(s[i] for i in lidx)
        key = (s, local.initial_dset(x), (x,) if policy.uses_history else None)
        layer[key] = layer.get(key, 0.0) + p
    value = 0.0
    seen = len(layer)
    for t in range(1, model.horizon + 1):
        nxt: dict = {}
        last = t == model.horizon
        for (s, d, hist), w in layer.items():
            x = tuple(s[i] for i in lidx)
            probs = policy.probs(t, x, d, hist)
            for a in np.flatnonzero(probs):
                a = int(a)
                wa = w * float(probs[a])
                for q, s2 in cm.joint_next(s, a):
                    value += wa * q * cm.reward(s, a, s2)
                    if last:
                        continue
                    x2 = tuple(s2[i] for i in lidx)
                    key = (s2, local.dset_update(d, x2, a),
                           hist + (a, x2) if hist is not None else None)
                    nxt[key] = nxt.get(key, 0.0) + wa * q
        seen += len(nxt)
        if seen > cap:
            raise CapacityError(f"exact evaluation exceeds {cap} (state, history) pairs; "
                                "use evaluate_policy_mc")
        layer = nxt
    return value
