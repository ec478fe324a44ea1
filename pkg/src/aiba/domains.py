"""Builders for the benchmark environments and a few small test domains."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import (AUX, STATE, FactoredPosg, FactorSpec, FixedPolicy, LocalModelSpec,
                    RewardSpec, validate_model)

SATELLITE_POLICIES = ("threshold-stochastic", "uniform-random", "threshold-deterministic")


def _table(parent_cards, card, fn) -> np.ndarray:
    """Dense CPT from ``fn(*parent values)`` returning a value or a distribution."""
    tab = np.zeros(tuple(parent_cards) + (card,))
    for idx in itertools.product(*[range(c) for c in parent_cards]):
        out = fn(*idx)
        if isinstance(out, (int, np.integer)):
            tab[idx + (int(out),)] = 1.0
        elif isinstance(out, dict):
            for v, p in out.items():
                tab[idx + (v,)] += p
        else:
            tab[idx] = out
    return tab


def _bern(p: float) -> dict[int, float]:
    return {0: 1.0 - p, 1: p}


def _check_prob(**kw):
    for k, p in kw.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{k}={p} is not a probability")


def _finish(model: FactoredPosg, local: LocalModelSpec):
    validate_model(model, local).raise_if_invalid()
    return model, local


# -- planetary exploration -----------------------------------------------------


@dataclass(frozen=True)
class RoverConfig:
    """Rover on a 1-D track helped by a battery-limited satellite.

    Positions ``0..track_length-1`` are cells (the last is the target) and
    ``track_length`` is the absorbing goal-reached state; entering it pays
    ``goal_reward``. A failed move pays ``fail_penalty``.
    """

    track_length: int = 5
    horizon: int = 6
    satellite_policy: str = "threshold-stochastic"
    battery_levels: int = 4
    threshold: int = 1
    recharge_prob: float = 0.5
    plan_attempt_prob: float = 0.8
    move_success: float = 0.3
    plan_boost: float = 0.6
    goal_reward: float = 10.0
    fail_penalty: float = -0.5

    def __post_init__(self):
        if self.horizon < 1 or self.track_length < 1 or self.battery_levels < 1:
            raise ValueError("horizon, track_length and battery_levels must be >= 1")
        if self.satellite_policy not in SATELLITE_POLICIES:
            raise ValueError(f"unknown satellite policy {self.satellite_policy!r}")
        _check_prob(recharge_prob=self.recharge_prob, plan_attempt_prob=self.plan_attempt_prob,
                    move_success=self.move_success,
                    boosted=self.move_success + self.plan_boost)


def build_rover(cfg: RoverConfig = RoverConfig()):
    L, B = cfg.track_length, cfg.battery_levels
    target, done = L - 1, L
    WAIT, MOVE = 0, 1

    def charge_next(charge, a_sat):
        if a_sat == 1:
            return max(charge - 1, 0)
        up = min(charge + 1, B - 1)
        return {charge: 1.0 - cfg.recharge_prob, up: cfg.recharge_prob} if up != charge else charge

    def pos_next(pos, pl, a):
        if pos == done or pos == target:
            return done
        if a == WAIT:
            return pos
        p = cfg.move_success + (cfg.plan_boost if pl else 0.0)
        nxt = done if pos + 1 == target else pos + 1
        return {nxt: p, pos: 1.0 - p} if p < 1.0 else nxt

    def sat_policy(charge):
        if cfg.satellite_policy == "uniform-random":
            return _bern(0.5)
        low = charge < cfg.threshold
        if cfg.satellite_policy == "threshold-deterministic":
            return int(low)
        return _bern(cfg.plan_attempt_prob if low else 0.0)

    factors = (
        FactorSpec("pos", L + 1, (("pos", 1), ("pl", 1), ("a", 1))),
        FactorSpec("pl", 2, (("a_sat", 1),)),
        FactorSpec("charge", B, (("charge", 1), ("a_sat", 1))),
    )
    cpds = {
        "pos": _table((L + 1, 2, 2), L + 1, pos_next),
        "pl": _table((2,), 2, lambda s: s),
        "charge": _table((B, 2), B, charge_next),
    }
    sat = FixedPolicy("satellite", "a_sat", 2, ("charge",), _table((B,), 2, sat_policy))

    reward = np.zeros((L + 1, 2, L + 1))
    for pos, a in itertools.product(range(L + 1), range(2)):
        if pos != done:
            reward[pos, a, done] += cfg.goal_reward
        if a == MOVE and pos not in (target, done):
            reward[pos, a, pos] += cfg.fail_penalty
    initial = tuple(((0, 0, c), 1.0 / B) for c in range(B))
    model = FactoredPosg("rover", factors, cpds, "a", ("wait", "move"),
                         RewardSpec(("pos", "a", "pos'"), reward), cfg.horizon, initial, (sat,))
    local = LocalModelSpec(("pos",), ("pl",), ("a_sat",), ("pl",), "a")
    return _finish(model, local)


# -- traffic network -----------------------------------------------------------


@dataclass(frozen=True)
class TrafficConfig:
    """Four intersections; the protagonist controls the top-left one.

    Cars leaving west re-enter above the local north lane; cars leaving
    south continue to (4,1) and may re-enter column 4, travel through (4,4)
    and (1,4) and reach the local east lane. ``dset="full"`` keeps the whole
    local history (state and previous action); ``"outflow"`` keeps only the
    outgoing south/west indicators.
    """

    horizon: int = 4
    reentry_prob: float = 0.5
    arrival_prob: float = 0.3
    random_agent_hor_prob: float = 0.5
    dset: str = "full"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dset not in ("full", "outflow"):
            raise ValueError("dset must be 'full' or 'outflow'")
        _check_prob(reentry_prob=self.reentry_prob, arrival_prob=self.arrival_prob,
                    random_agent_hor_prob=self.random_agent_hor_prob)


def build_traffic(cfg: TrafficConfig = TrafficConfig()):
    HOR, VERT = 0, 1
    p_re, q = cfg.reentry_prob, cfg.arrival_prob

    def keep_or(stay, arrive):
        return 1 if (stay or arrive) else 0

    F = FactorSpec
    factors = (
        F("south", 2, (("north", 1), ("a", 1))),
        F("west", 2, (("east", 1), ("a", 1))),
        F("east", 2, (("east", 1), ("a", 1), ("in_e", 1))),
        F("north", 2, (("north", 1), ("a", 1), ("in_n", 1))),
        F("t_n", 2, (("west", 1),)),
        F("b_h", 2, (("b_h", 1), ("a_B", 1), ("d_v", 1), ("a_D", 1))),
        F("c_v", 2, (("c_v", 1), ("a_C", 1), ("south", 1))),
        F("c_h", 2, (("c_h", 1), ("a_C", 1), ("d_h", 1), ("a_D", 1))),
        F("d_v", 2, (("d_v", 1), ("a_D", 1), ("c_v", 1), ("a_C", 1))),
        F("d_h", 2, (("d_h", 1), ("a_D", 1))),
        F("in_e", 2, (("b_h", 0), ("a_B", 0)), AUX),
        F("in_n", 2, (("t_n", 0),), AUX),
    )
    cpds = {
        "south": _table((2, 2), 2, lambda n, a: int(n and a == VERT)),
        "west": _table((2, 2), 2, lambda e, a: int(e and a == HOR)),
        "east": _table((2, 2, 2), 2, lambda e, a, i: keep_or(e and a != HOR, i)),
        "north": _table((2, 2, 2), 2, lambda n, a, i: keep_or(n and a != VERT, i)),
        "t_n": _table((2,), 2, lambda w: _bern(p_re if w else 0.0)),
        "b_h": _table((2,) * 4, 2, lambda b, aB, dv, aD: keep_or(b and aB != HOR, dv and aD == VERT)),
        "c_v": _table((2,) * 3, 2, lambda c, aC, s: keep_or(c and aC != VERT, s)),
        "c_h": _table((2,) * 4, 2, lambda c, aC, dh, aD: keep_or(c and aC != HOR, dh and aD == HOR)),
        "d_v": _table((2,) * 4, 2, lambda d, aD, cv, aC: 1 if (d and aD != VERT) else _bern(
            p_re if (cv and aC == VERT) else 0.0)),
        "d_h": _table((2, 2), 2, lambda d, aD: 1 if (d and aD != HOR) else _bern(q)),
        "in_e": _table((2, 2), 2, lambda b, aB: int(b and aB == HOR)),
        "in_n": _table((2,), 2, lambda t: t),
    }
    prioritize = lambda queued: HOR if queued else VERT  # noqa: E731
    policies = (
        FixedPolicy("(1,4)", "a_B", 2, ("b_h",), _table((2,), 2, prioritize)),
        FixedPolicy("(4,1)", "a_C", 2, ("c_h",), _table((2,), 2, prioritize)),
        FixedPolicy("(4,4)", "a_D", 2, (), _table((), 2, lambda: _bern(1.0 - cfg.random_agent_hor_prob))),
    )
    # reward counts cars waiting on the incoming lanes after the step
    reward = np.zeros((2, 2))
    for e, n in itertools.product(range(2), range(2)):
        reward[e, n] = -e - n
    names = [f.name for f in factors if f.kind == STATE]
    start = dict.fromkeys(names, 0)
    start.update(east=1, north=1, d_v=1)
    initial = ((tuple(start[n] for n in names), 1.0),)
    model = FactoredPosg("traffic", factors, cpds, "a", ("hor", "vert"),
                         RewardSpec(("east'", "north'"), reward), cfg.horizon, initial, policies)
    rule = ("south", "east", "north", "west", "a") if cfg.dset == "full" else ("south", "west")
    local = LocalModelSpec(("south", "west"), ("east", "north"), ("in_e", "in_n"), rule, "a")
    return _finish(model, local)


# -- fire fighters -------------------------------------------------------------


@dataclass(frozen=True)
class FireFightersConfig:
    """Two agents, three houses; agent 1 fights at house 1 or 2, agent 2 at 2 or 3."""

    horizon: int = 4
    spread_prob: float = 0.9
    extinguish_clear: float = 1.0
    extinguish_neighbors: float = 0.6
    extinguish_two: float = 1.0
    other_policy: str = "reactive"
    initial: str = "uniform"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.other_policy not in ("reactive", "uniform-random"):
            raise ValueError(f"unknown policy {self.other_policy!r}")
        if self.initial not in ("uniform", "no-fire"):
            raise ValueError(f"unknown initial distribution {self.initial!r}")
        _check_prob(spread_prob=self.spread_prob, extinguish_clear=self.extinguish_clear,
                    extinguish_neighbors=self.extinguish_neighbors,
                    extinguish_two=self.extinguish_two)


def build_firefighters(cfg: FireFightersConfig = FireFightersConfig()):
    def house(x, neighbors, agents):
        burning_nb = any(neighbors)
        if agents >= 2:
            p_out = cfg.extinguish_two
        elif agents == 1:
            p_out = cfg.extinguish_neighbors if burning_nb else cfg.extinguish_clear
        else:
            if x:
                return 1
            return _bern(cfg.spread_prob if burning_nb else 0.0)
        return _bern(1.0 - p_out) if x else 0

    # a1: 0 -> house 1, 1 -> house 2;  a2: 0 -> house 2, 1 -> house 3
    factors = (
        FactorSpec("x1", 2, (("x1", 1), ("x2", 1), ("a", 1))),
        FactorSpec("x2", 2, (("x1", 1), ("x2", 1), ("x3", 1), ("a", 1), ("a2", 1))),
        FactorSpec("x3", 2, (("x2", 1), ("x3", 1), ("a2", 1))),
    )
    cpds = {
        "x1": _table((2, 2, 2), 2, lambda x1, x2, a1: house(x1, (x2,), int(a1 == 0))),
        "x2": _table((2,) * 5, 2, lambda x1, x2, x3, a1, a2: house(
            x2, (x1, x3), int(a1 == 1) + int(a2 == 0))),
        "x3": _table((2, 2, 2), 2, lambda x2, x3, a2: house(x3, (x2,), int(a2 == 1))),
    }
    if cfg.other_policy == "reactive":
        pol = _table((2, 2), 2, lambda x2, x3: 1 if x3 else 0)
    else:
        pol = _table((2, 2), 2, lambda x2, x3: _bern(0.5))
    other = FixedPolicy("agent2", "a2", 2, ("x2", "x3"), pol)
    reward = np.zeros((2, 2))
    for x1, x2 in itertools.product(range(2), range(2)):
        reward[x1, x2] = -x1 - x2
    if cfg.initial == "uniform":
        initial = tuple((s, 1 / 8) for s in itertools.product(range(2), repeat=3))
    else:
        initial = (((0, 0, 0), 1.0),)
    model = FactoredPosg("firefighters", factors, cpds, "a", ("house1", "house2"),
                         RewardSpec(("x1'", "x2'"), reward), cfg.horizon, initial, (other,))
    local = LocalModelSpec(("x1",), ("x2",), ("a2", "x3"), ("x1", "a", "x2"), "a")
    return _finish(model, local)


# -- small domains for checks --------------------------------------------------


@dataclass(frozen=True)
class GuessConfig:
    """A hidden binary source that the agent must anticipate.

    ``src`` persists with ``stickiness``; the local ``obs`` copies the
    previous source value with ``obs_noise`` flips. Guessing the next
    observation pays ``reward``.
    """

    horizon: int = 2
    stickiness: float = 0.8
    obs_noise: float = 0.1
    src_prior: float = 0.6
    reward: float = 1.0


def build_guess(cfg: GuessConfig = GuessConfig()):
    factors = (
        FactorSpec("obs", 2, (("src", 1),)),
        FactorSpec("src", 2, (("src", 1),)),
    )
    cpds = {
        "obs": _table((2,), 2, lambda s: {s: 1 - cfg.obs_noise, 1 - s: cfg.obs_noise}),
        "src": _table((2,), 2, lambda s: {s: cfg.stickiness, 1 - s: 1 - cfg.stickiness}),
    }
    reward = np.zeros((2, 2))
    for a in range(2):
        reward[a, a] = cfg.reward
    p1 = cfg.src_prior
    initial = tuple(((o, s), po * ps) for o, po in ((0, 0.5), (1, 0.5))
                    for s, ps in ((0, 1 - p1), (1, p1)))
    model = FactoredPosg("guess", factors, cpds, "a", ("zero", "one"),
                         RewardSpec(("a", "obs'"), reward), cfg.horizon, initial)
    local = LocalModelSpec((), ("obs",), ("src",), ("obs",), "a")
    return _finish(model, local)


def build_chain(horizon: int = 4, n_actions: int = 1, length: int = 8):
    """Deterministic counter paying 1 per step; every action is equivalent."""
    factors = (FactorSpec("k", length, (("k", 1),)),)
    cpds = {"k": _table((length,), length, lambda k: min(k + 1, length - 1))}
    reward = np.ones((length,))
    model = FactoredPosg("chain", factors, cpds, "a", tuple(f"a{i}" for i in range(n_actions)),
                         RewardSpec(("k",), reward), horizon, (((0,), 1.0),))
    local = LocalModelSpec(("k",), (), (), ("k",), "a")
    return _finish(model, local)


DOMAINS = {
    "rover": (RoverConfig, build_rover),
    "traffic": (TrafficConfig, build_traffic),
    "firefighters": (FireFightersConfig, build_firefighters),
    "guess": (GuessConfig, build_guess),
}


def build_domain(name: str, **overrides):
    try:
        cfg_cls, builder = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    return builder(cfg_cls(**overrides))
