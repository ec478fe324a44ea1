"""Influence points: P(y_src^t | d^t) as exact, tabular or learned predictors.

Every flavour answers ``predict(t, dset)`` with a distribution over the joint
influence-source index (mixed radix over ``local.y_src``). Learned flavours
also provide ``predict_dataset`` to score all records of a dataset at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import CapacityError, FactoredPosg, LocalModelSpec, y_cardinalities
from .simulator import InfluenceDataset, _tok, _untok

PROB_FLOOR = 1e-6
DEFAULT_DEDUCE_CAP = 10**7


class UnreachableQueryError(LookupError):
    """The exact influence has no entry for a d-set with zero probability."""


def clamp(p: np.ndarray, floor: float = PROB_FLOOR) -> np.ndarray:
    """Floor probabilities and renormalize along the last axis."""
    q = np.clip(p, floor, 1.0)
    return q / q.sum(axis=-1, keepdims=True)


class Influence:
    n_y: int
    horizon: int

    def predict(self, t: int, dset: tuple) -> np.ndarray:
        raise NotImplementedError

    def predict_dataset(self, ds: InfluenceDataset) -> np.ndarray:
        """Predictions for every record, shape (N, h, n_y)."""
        out = np.empty((ds.n, ds.horizon, self.n_y))
        for t in range(1, ds.horizon + 1):
            flat = ds.records[:, :t].reshape(ds.n, -1)
            uniq, inv = np.unique(flat, axis=0, return_inverse=True)
            r = ds.records.shape[2]
            preds = np.array([self.predict(t, tuple(map(tuple, u.reshape(t, r).tolist())))
                              for u in uniq])
            out[:, t - 1] = preds[inv.reshape(-1)]
        return out


def _check_query(t: int, dset: tuple, horizon: int) -> None:
    if not 1 <= t <= horizon or len(dset) != t:
        raise ValueError(f"bad influence query: t={t}, d-set length {len(dset)}")


# -- exact ----------------------------------------------------------------------


@dataclass
class ExactInfluence(Influence):
    """``table[t][d]`` holds I^t(.|d) for every d-set reached with positive
    probability; ``weight[t][d]`` is that probability."""

    table: dict[int, dict[tuple, np.ndarray]]
    weight: dict[int, dict[tuple, float]]
    n_y: int
    horizon: int

    def predict(self, t, dset):
        _check_query(t, dset, self.horizon)
        try:
            return self.table[t][dset]
        except KeyError:
            raise UnreachableQueryError(f"d-set {dset} is unreachable at t={t}") from None

    def reachable(self):
        """Yields ``(t, d)`` for all stored keys, ordered by t."""
        for t in range(1, self.horizon + 1):
            yield from ((t, d) for d in self.table[t])

    def n_dsets(self, t: int | None = None) -> int:
        t = self.horizon if t is None else t
        return len(self.table[t])


def deduce_exact_influence(model: FactoredPosg, local: LocalModelSpec,
                           cap: int = DEFAULT_DEDUCE_CAP) -> ExactInfluence:
    """Forward enumeration of P(state, d-set) under the uniform exploratory
    protagonist policy and the fixed policies of the other agents."""
    cm = model.compiled
    lidx = [cm.pos[f] for f in local.factors]
    ycards = y_cardinalities(model, local)
    ypos = [cm.pos[n] for n in local.y_src]
    n_y = int(np.prod(ycards)) if ycards else 1
    n_a = model.n_actions

    def y_of(s, aux):
        full = s + aux
        idx = 0
        for p, c in zip(ypos, ycards):
            idx = idx * c + full[p]
        return idx

    layer: dict = {}
    for s, p in model.initial:
        if p <= 0:
            continue
        key = (s, local.initial_dset(tuple(s[i] for i in lidx)))
        layer[key] = layer.get(key, 0.0) + p
    table: dict = {}
    weight: dict = {}
    seen = 0
    for t in range(1, model.horizon + 1):
        acc: dict = {}
        nxt: dict = {}
        for (s, d), w in layer.items():
            vec = acc.get(d)
            if vec is None:
                vec = acc[d] = np.zeros(n_y)
            for p, aux in cm.aux_outcomes(s):
                vec[y_of(s, aux)] += w * p
                if t == model.horizon:
                    continue
                for a in range(n_a):
                    for q, s2 in cm.next_outcomes(s, aux, a):
                        key = (s2, local.dset_update(d, tuple(s2[i] for i in lidx), a))
                        nxt[key] = nxt.get(key, 0.0) + w * p * q / n_a
        seen += len(layer)
        if seen > cap:
            raise CapacityError(f"exact influence deduction exceeds {cap} weighted prefixes")
        table[t] = {d: v / v.sum() for d, v in acc.items()}
        weight[t] = {d: float(v.sum()) for d, v in acc.items()}
        layer = nxt
    return ExactInfluence(table, weight, n_y, model.horizon)


def dump_exact(inf: ExactInfluence, path: str | Path) -> None:
    """Text dump, one ``t,dset,y,prob`` line per entry."""
    with open(path, "w") as fh:
        for t, d in inf.reachable():
            toks = " ".join(_tok(r) for r in d)
            for y, p in enumerate(inf.table[t][d]):
                fh.write(f"{t},{toks},{y},{float(p)!r}\n")


def load_exact(path: str | Path, n_y: int, horizon: int) -> ExactInfluence:
    table: dict = {t: {} for t in range(1, horizon + 1)}
    with open(path) as fh:
        for line in fh:
            t_s, d_s, y_s, p_s = line.rstrip("\n").split(",")
            d = tuple(_untok(tok) for tok in d_s.split(" "))
            vec = table[int(t_s)].setdefault(d, np.zeros(n_y))
            vec[int(y_s)] = float(p_s)
    weight = {t: {d: float("nan") for d in table[t]} for t in table}
    return ExactInfluence(table, weight, n_y, horizon)


# -- empirical ------------------------------------------------------------------


@dataclass
class EmpiricalInfluence(Influence):
    counts: dict[int, dict[tuple, np.ndarray]]
    n_y: int
    horizon: int
    smoothing: float = 0.0

    def predict(self, t, dset):
        _check_query(t, dset, self.horizon)
        c = self.counts[t].get(dset)
        if c is None:
            return np.full(self.n_y, 1.0 / self.n_y)
        c = c + self.smoothing
        tot = c.sum()
        if tot <= 0:
            return np.full(self.n_y, 1.0 / self.n_y)
        return c / tot

    def support(self, t: int, dset: tuple) -> int:
        c = self.counts[t].get(dset)
        return 0 if c is None else int(c.sum())


def fit_empirical(ds: InfluenceDataset, smoothing: float = 0.0) -> EmpiricalInfluence:
    if ds.n < 1:
        raise ValueError("empty dataset")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    counts: dict = {}
    r = ds.records.shape[2]
    for t in range(1, ds.horizon + 1):
        flat = ds.records[:, :t].reshape(ds.n, -1)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        tab = np.zeros((len(uniq), ds.n_y))
        np.add.at(tab, (inv, ds.y[:, t - 1]), 1.0)
        counts[t] = {tuple(map(tuple, u.reshape(t, r).tolist())): tab[i]
                     for i, u in enumerate(uniq)}
    return EmpiricalInfluence(counts, ds.n_y, ds.horizon, float(smoothing))


# -- generic helpers ------------------------------------------------------------


@dataclass
class TableInfluence(Influence):
    """Explicit ``{t: {d: distribution}}`` with a fallback for missing keys."""

    table: dict[int, dict[tuple, np.ndarray]]
    n_y: int
    horizon: int
    fallback: np.ndarray | None = None

    def predict(self, t, dset):
        _check_query(t, dset, self.horizon)
        hit = self.table.get(t, {}).get(dset)
        if hit is not None:
            return hit
        if self.fallback is None:
            raise UnreachableQueryError(f"no entry for d-set {dset} at t={t}")
        return self.fallback


@dataclass
class ConstantInfluence(Influence):
    probs: np.ndarray
    horizon: int

    @property
    def n_y(self):
        return len(self.probs)

    def predict(self, t, dset):
        _check_query(t, dset, self.horizon)
        return self.probs


def perturb(inf: ExactInfluence, scale: float, seed: int) -> TableInfluence:
    """Random mixture of each exact row with a Dirichlet draw."""
    rng = np.random.default_rng(seed)
    table = {}
    for t in range(1, inf.horizon + 1):
        table[t] = {}
        for d, p in inf.table[t].items():
            q = rng.dirichlet(np.ones(inf.n_y))
            table[t][d] = (1 - scale) * p + scale * q
    return TableInfluence(table, inf.n_y, inf.horizon,
                          fallback=np.full(inf.n_y, 1.0 / inf.n_y))


def predict(influence: Influence, t: int, dset: tuple) -> np.ndarray:
    return influence.predict(t, dset)
