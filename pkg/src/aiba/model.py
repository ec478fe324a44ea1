"""Factored POSG with fixed non-protagonist policies, as a two-slice DBN.

Time runs over decision steps t = 1..h. Slice t holds the state factors
``s^t``, the auxiliary nodes of that step (other agents' actions and any
derived same-step variables) and the protagonist action ``a^t``. The next
slice's state factors are drawn from CPTs whose parents live in slice t
(lag 1) or among the already-drawn state factors of slice t+1 (lag 0).
Rewards are tabulated over (current local values, action, next local values).

All values are small non-negative integers and all tables are dense.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

STATE = "state"
AUX = "aux"
ACTION = "action"

NO_ACTION = -1  # action slot of the first d-set record

NORMALIZATION_TOL = 1e-12


class ModelError(ValueError):
    """Malformed model input (unknown factor, out-of-range value...)."""


class CapacityError(RuntimeError):
    """An exact enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class FactorSpec:
    name: str
    cardinality: int
    parents: tuple[tuple[str, int], ...] = ()
    kind: str = STATE


@dataclass(frozen=True, eq=False)
class FixedPolicy:
    """Stateless policy of a non-protagonist agent.

    ``table`` has shape ``(*parent cards, cardinality)``; parents are
    same-step state or auxiliary factors.
    """

    agent: str
    action: str
    cardinality: int
    parents: tuple[str, ...]
    table: np.ndarray

    def as_factor(self) -> FactorSpec:
        return FactorSpec(self.action, self.cardinality,
                          tuple((p, 0) for p in self.parents), ACTION)


@dataclass(frozen=True, eq=False)
class RewardSpec:
    """Dense reward table.

    ``scope`` names the table axes: ``"x"`` is factor x in the current
    slice, ``"x'"`` the same factor in the next slice, and the protagonist
    action name stands for the action.
    """

    scope: tuple[str, ...]
    table: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.table)))


@dataclass(frozen=True, eq=False)
class FactoredPosg:
    name: str
    factors: tuple[FactorSpec, ...]
    cpds: dict[str, np.ndarray]
    action_name: str
    actions: tuple[str, ...]
    reward: RewardSpec
    horizon: int
    initial: tuple[tuple[tuple[int, ...], float], ...]
    other_policies: tuple[FixedPolicy, ...] = ()

    # -- derived structure -------------------------------------------------

    @cached_property
    def nodes(self) -> tuple[FactorSpec, ...]:
        return self.factors + tuple(p.as_factor() for p in self.other_policies)

    @cached_property
    def tables(self) -> dict[str, np.ndarray]:
        out = {k: np.asarray(v, dtype=float) for k, v in self.cpds.items()}
        for p in self.other_policies:
            out[p.action] = np.asarray(p.table, dtype=float)
        return out

    @cached_property
    def state_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors if f.kind == STATE)

    @cached_property
    def aux_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.nodes if f.kind != STATE)

    @cached_property
    def card(self) -> dict[str, int]:
        out = {f.name: f.cardinality for f in self.nodes}
        out[self.action_name] = len(self.actions)
        return out

    @cached_property
    def spec(self) -> dict[str, FactorSpec]:
        return {f.name: f for f in self.nodes}

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @cached_property
    def compiled(self) -> "CompiledModel":
        return CompiledModel(self)

    def state_index(self, name: str) -> int:
        return self.state_names.index(name)


@dataclass(frozen=True)
class LocalModelSpec:
    """Partition of the factors around the protagonist.

    ``dset_rule`` lists the local factors (read at the current step) and,
    optionally, the protagonist action (read at the previous step,
    ``NO_ACTION`` at t = 1) whose history forms the d-set.
    """

    x_int: tuple[str, ...]
    x_dest: tuple[str, ...]
    y_src: tuple[str, ...]
    dset_rule: tuple[str, ...]
    action: str = "a"

    @property
    def factors(self) -> tuple[str, ...]:
        return self.x_int + self.x_dest

    def record(self, x: tuple[int, ...], prev_action: int) -> tuple[int, ...]:
        idx = {n: i for i, n in enumerate(self.factors)}
        return tuple(prev_action if n == self.action else x[idx[n]]
                     for n in self.dset_rule)

    def initial_dset(self, x: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
        return (self.record(x, NO_ACTION),)

    def dset_update(self, d: tuple, x_next: tuple[int, ...], action: int) -> tuple:
        return d + (self.record(x_next, action),)


def dset_update(local: LocalModelSpec, dset: tuple, x_next: tuple[int, ...],
                action: int) -> tuple:
    """Append the record of the new step; ``dset=()`` starts a history."""
    if not dset:
        return local.initial_dset(x_next)
    return local.dset_update(dset, x_next, action)


# -- validation ----------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ModelError("invalid model: " + "; ".join(self.violations))


def _topo_order(names, deps) -> list[str] | None:
    order, done, busy = [], set(), set()

    def visit(n):
        if n in done:
            return True
        if n in busy:
            return False
        busy.add(n)
        for m in deps.get(n, ()):
            if not visit(m):
                return False
        busy.discard(n)
        done.add(n)
        order.append(n)
        return True

    for n in names:
        if not visit(n):
            return None
    return order


def validate_model(model: FactoredPosg, local: LocalModelSpec | None = None) -> ValidationReport:
    rep = ValidationReport()
    v = rep.violations
    names = [f.name for f in model.nodes]
    known = set(names) | {model.action_name}
    if len(set(names)) != len(names) or model.action_name in names:
        v.append("duplicate factor name")
    if model.horizon < 1:
        v.append("horizon must be >= 1")
    if not model.actions:
        v.append("protagonist needs at least one action")
    kinds = {f.name: f.kind for f in model.nodes}

    for f in model.nodes:
        if f.cardinality < 1:
            v.append(f"{f.name}: cardinality < 1")
        for p, lag in f.parents:
            if p not in known:
                v.append(f"{f.name}: dangling parent {p}")
                continue
            if lag not in (0, 1):
                v.append(f"{f.name}: parent {p} has lag {lag}")
            if f.kind != STATE and lag != 0:
                v.append(f"{f.name}: auxiliary node with previous-step parent {p}")
            if lag == 0 and p == model.action_name:
                v.append(f"{f.name}: same-step dependence on the protagonist action")
            if f.kind == STATE and lag == 0 and kinds.get(p) != STATE:
                v.append(f"{f.name}: same-step parent {p} is not a state factor")
        tab = model.tables.get(f.name)
        if tab is None:
            v.append(f"{f.name}: missing CPT")
            continue
        shape = tuple(model.card.get(p, -1) for p, _ in f.parents) + (f.cardinality,)
        if tab.shape != shape:
            v.append(f"{f.name}: CPT shape {tab.shape} != {shape}")
            continue
        if np.any(tab < 0) or not np.all(np.isfinite(tab)):
            v.append(f"{f.name}: CPT has negative or non-finite entries")
        if np.any(np.abs(tab.sum(axis=-1) - 1.0) > NORMALIZATION_TOL):
            v.append(f"{f.name}: row not normalized")

    for deps in (
        {f.name: [p for p, lag in f.parents if lag == 0] for f in model.nodes if f.kind == STATE},
        {f.name: [p for p, lag in f.parents if lag == 0 and kinds.get(p) != STATE]
         for f in model.nodes if f.kind != STATE},
    ):
        if _topo_order(list(deps), deps) is None:
            v.append("same-step parent relation is cyclic")

    total = 0.0
    for s, p in model.initial:
        total += p
        if len(s) != len(model.state_names) or any(
                not 0 <= s[i] < model.card[n] for i, n in enumerate(model.state_names)):
            v.append(f"initial state {s} malformed")
            break
    if abs(total - 1.0) > NORMALIZATION_TOL:
        v.append("initial distribution not normalized")

    r = model.reward
    for i, name in enumerate(r.scope):
        base = name.rstrip("'")
        if base not in model.card:
            v.append(f"reward scope references unknown {name}")
        elif r.table.shape[i] != model.card[base]:
            v.append(f"reward axis {name} has wrong size")
    if not np.all(np.isfinite(r.table)):
        v.append("reward not finite")

    if local is not None:
        _validate_local(model, local, v)
    return rep


def _validate_local(model: FactoredPosg, local: LocalModelSpec, v: list[str]) -> None:
    spec = model.spec
    xi, xd, ys = set(local.x_int), set(local.x_dest), set(local.y_src)
    loc = xi | xd
    for n in local.x_int + local.x_dest + local.y_src:
        if n not in spec:
            v.append(f"local spec references unknown factor {n}")
    if v:
        return
    if xi & xd:
        v.append("x_int and x_dest overlap")
    if ys & loc:
        v.append("y_src overlaps local factors")
    if local.action != model.action_name:
        v.append("local action name differs from model action")
    for n in loc:
        if spec[n].kind != STATE:
            v.append(f"local factor {n} is not a state factor")
    for n in local.x_int:
        for p, lag in spec[n].parents:
            if lag != 1:
                v.append(f"local factor {n} has same-step parent {p}")
            elif p not in loc and p != model.action_name:
                v.append(f"x_int has non-local parent ({n} <- {p})")
    for n in local.x_dest:
        for p, lag in spec[n].parents:
            if lag != 1:
                v.append(f"local factor {n} has same-step parent {p}")
            elif p not in loc and p != model.action_name and p not in ys:
                v.append(f"x_dest {n} has non-local parent {p} outside y_src")
    for n in local.y_src:
        if not any(n in (p for p, _ in spec[d].parents) for d in local.x_dest):
            v.append(f"y_src {n} is not a parent of any x_dest factor")
    for n in local.dset_rule:
        if n not in loc and n != model.action_name:
            v.append(f"dset_rule references non-local {n}")
    for name in model.reward.scope:
        base = name.rstrip("'")
        if base not in loc and base != model.action_name:
            v.append(f"reward depends on non-local {name}")


# -- compiled tables -----------------------------------------------------------


class CompiledModel:
    """Index tables and cached one-step enumerations for a model.

    Slice vectors are laid out as ``state factors + aux nodes + (action,)``.
    """

    def __init__(self, model: FactoredPosg):
        self.model = model
        self.state_names = model.state_names
        self.aux_names = model.aux_names
        self.slice_names = self.state_names + self.aux_names + (model.action_name,)
        self.pos = {n: i for i, n in enumerate(self.slice_names)}
        self.n_state = len(self.state_names)
        self.n_aux = len(self.aux_names)
        spec = model.spec
        kinds = {f.name: f.kind for f in model.nodes}

        deps = {n: [p for p, lag in spec[n].parents if lag == 0 and kinds.get(p) != STATE]
                for n in self.aux_names}
        self.aux_order = [self.pos[n] for n in _topo_order(list(self.aux_names), deps) or self.aux_names]
        deps = {n: [p for p, lag in spec[n].parents if lag == 0] for n in self.state_names}
        self.state_order = [self.pos[n] for n in _topo_order(list(self.state_names), deps) or self.state_names]
        self.tables = [model.tables[n] for n in self.slice_names[:-1]]
        # parent refs: (lag, slice position)
        self.parents = [tuple((lag, self.pos[p]) for p, lag in spec[n].parents)
                        for n in self.slice_names[:-1]]
        self.reward_axes = []
        for name in model.reward.scope:
            nxt = name.endswith("'")
            self.reward_axes.append((nxt, self.pos[name.rstrip("'")]))
        self._aux_cache: dict = {}
        self._step_cache: dict = {}
        self._joint_cache: dict = {}

    def _enumerate(self, order, prev, cur, fixed=None):
        """Joint over the nodes in ``order``; ``cur`` is a partially filled list."""
        out = []
        n = len(order)

        def rec(k, prob):
            if k == n:
                out.append((prob, tuple(cur)))
                return
            i = order[k]
            row = self.tables[i][tuple(prev[j] if lag else cur[j] for lag, j in self.parents[i])]
            if fixed is not None and i in fixed:
                val = fixed[i]
                cur[i] = val
                rec(k + 1, prob)
                return
            for val in np.flatnonzero(row):
                cur[i] = int(val)
                rec(k + 1, prob * float(row[val]))

        rec(0, 1.0)
        return out

    def aux_outcomes(self, s: tuple[int, ...]):
        """[(prob, aux values)] for slice t given its state."""
        hit = self._aux_cache.get(s)
        if hit is None:
            cur = list(s) + [0] * (self.n_aux + 1)
            hit = [(p, v[self.n_state:self.n_state + self.n_aux])
                   for p, v in self._enumerate(self.aux_order, None, cur)]
            self._aux_cache[s] = hit
        return hit

    def next_outcomes(self, s, aux, a):
        """[(prob, next state)] given the full slice t."""
        key = (s, aux, a)
        hit = self._step_cache.get(key)
        if hit is None:
            prev = s + aux + (a,)
            cur = [0] * len(self.slice_names)
            res = {}
            for p, v in self._enumerate(self.state_order, prev, cur):
                ns = v[:self.n_state]
                res[ns] = res.get(ns, 0.0) + p
            hit = list(res.items())
            hit = [(p, ns) for ns, p in hit]
            self._step_cache[key] = hit
        return hit

    def joint_next(self, s, a):
        """[(prob, next state)] with the auxiliary nodes marginalized."""
        key = (s, a)
        hit = self._joint_cache.get(key)
        if hit is None:
            res: dict = {}
            for p, aux in self.aux_outcomes(s):
                for q, ns in self.next_outcomes(s, aux, a):
                    res[ns] = res.get(ns, 0.0) + p * q
            hit = [(p, ns) for ns, p in res.items()]
            self._joint_cache[key] = hit
        return hit

    def reward(self, s, a, s_next) -> float:
        prev = s + (0,) * self.n_aux + (a,)
        nxt = s_next + (0,) * self.n_aux + (a,)
        idx = tuple((nxt if is_next else prev)[j] for is_next, j in self.reward_axes)
        return float(self.model.reward.table[idx])


def transition_prob(model: FactoredPosg, state: tuple[int, ...], joint_action: dict[str, int],
                    next_state: tuple[int, ...]) -> float:
    """T(s'|s, joint action): other agents' actions are given, derived
    auxiliary nodes are marginalized."""
    cm = model.compiled
    for vec in (state, next_state):
        if len(vec) != cm.n_state or any(
                not 0 <= int(vec[i]) < model.card[n] for i, n in enumerate(cm.state_names)):
            raise ModelError(f"malformed state {vec}")
    if model.action_name not in joint_action:
        raise ModelError("joint action lacks the protagonist action")
    a = int(joint_action[model.action_name])
    if not 0 <= a < model.n_actions:
        raise ModelError(f"unknown protagonist action {a}")
    fixed = {}
    for name, val in joint_action.items():
        if name == model.action_name:
            continue
        if name not in cm.pos or model.spec[name].kind != ACTION:
            raise ModelError(f"unknown agent action {name}")
        if not 0 <= val < model.card[name]:
            raise ModelError(f"action {name}={val} out of range")
        fixed[cm.pos[name]] = int(val)
    state = tuple(int(x) for x in state)
    next_state = tuple(int(x) for x in next_state)
    cur = list(state) + [0] * (cm.n_aux + 1)
    total = 0.0
    for p, v in cm._enumerate(cm.aux_order, None, cur, fixed=fixed):
        aux = v[cm.n_state:cm.n_state + cm.n_aux]
        for q, ns in cm.next_outcomes(state, aux, a):
            if ns == next_state:
                total += p * q
    return total


def local_projection(model: FactoredPosg, local: LocalModelSpec):
    """Indices of the local factors and the y_src factors in the slice vector."""
    cm = model.compiled
    return [cm.pos[n] for n in local.factors], [cm.pos[n] for n in local.y_src]


def y_cardinalities(model: FactoredPosg, local: LocalModelSpec) -> tuple[int, ...]:
    return tuple(model.card[n] for n in local.y_src)


def y_index(values, cards) -> int:
    idx = 0
    for v, c in zip(values, cards):
        idx = idx * c + int(v)
    return idx


def y_values(index: int, cards) -> tuple[int, ...]:
    out = []
    for c in reversed(cards):
        out.append(index % c)
        index //= c
    return tuple(reversed(out))


def initial_local_distribution(model: FactoredPosg, local: LocalModelSpec) -> dict[tuple, float]:
    sidx = [model.state_index(n) for n in local.factors]
    out: dict[tuple, float] = {}
    for s, p in model.initial:
        key = tuple(s[i] for i in sidx)
        out[key] = out.get(key, 0.0) + p
    return out


def local_cpt_rows(model: FactoredPosg, local: LocalModelSpec, x: tuple, a: int):
    """Per local factor: the conditional row, or an array over y (x_dest)."""
    lpos = {n: i for i, n in enumerate(local.factors)}
    ycards = y_cardinalities(model, local)
    ny = int(np.prod(ycards)) if ycards else 1
    rows = []
    for n in local.factors:
        f = model.spec[n]
        tab = model.tables[n]
        if n in local.x_int or not any(p in local.y_src for p, _ in f.parents):
            idx = tuple(a if p == model.action_name else x[lpos[p]] for p, _ in f.parents)
            rows.append(np.broadcast_to(tab[idx], (ny, f.cardinality)))
            continue
        out = np.empty((ny, f.cardinality))
        for yi in range(ny):
            yv = dict(zip(local.y_src, y_values(yi, ycards)))
            idx = tuple(a if p == model.action_name else (yv[p] if p in yv else x[lpos[p]])
                        for p, _ in f.parents)
            out[yi] = tab[idx]
        rows.append(out)
    return rows


def all_assignments(cards):
    return itertools.product(*[range(c) for c in cards])


# -- structured text configuration --------------------------------------------


def model_from_dict(cfg: dict) -> tuple[FactoredPosg, LocalModelSpec]:
    """Build a model from the nested key/value schema documented in README."""
    act = cfg["action"]
    factors = []
    cpds = {}
    for f in cfg["factors"]:
        parents = tuple((p[0], int(p[1])) if isinstance(p, (list, tuple)) else (p, 1)
                        for p in f.get("parents", []))
        factors.append(FactorSpec(f["name"], int(f["cardinality"]), parents, f.get("kind", STATE)))
        cpds[f["name"]] = np.asarray(f["cpt"], dtype=float)
    policies = tuple(
        FixedPolicy(p["agent"], p["action"], int(p["cardinality"]), tuple(p.get("parents", [])),
                    np.asarray(p["table"], dtype=float))
        for p in cfg.get("policies", []))
    initial = tuple((tuple(int(v) for v in e["state"]), float(e["prob"])) for e in cfg["initial"])
    rw = cfg["reward"]
    model = FactoredPosg(
        name=cfg.get("name", "custom"), factors=tuple(factors), cpds=cpds,
        action_name=act["name"], actions=tuple(act["values"]),
        reward=RewardSpec(tuple(rw["scope"]), np.asarray(rw["table"], dtype=float)),
        horizon=int(cfg["horizon"]), initial=initial, other_policies=policies)
    loc = cfg["local"]
    local = LocalModelSpec(tuple(loc.get("x_int", [])), tuple(loc.get("x_dest", [])),
                           tuple(loc.get("y_src", [])), tuple(loc.get("dset", [])), act["name"])
    return model, local


def load_model(path: str | Path) -> tuple[FactoredPosg, LocalModelSpec]:
    import yaml

    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    return model_from_dict(cfg)
