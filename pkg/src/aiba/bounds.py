"""Value-loss bounds, prediction-error estimators and correlation statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .influence import PROB_FLOOR, ExactInfluence, Influence, clamp
from .model import FactoredPosg
from .planner import Ialm, local_successors
from .simulator import InfluenceDataset


class UndefinedCorrelationError(ValueError):
    pass


class UndersampledError(ValueError):
    pass


def l1_gap(I: Influence, I_hat: Influence, t: int, d: tuple) -> float:
    return float(np.abs(I.predict(t, d) - I_hat.predict(t, d)).sum())


def kl_from(p: np.ndarray, q: np.ndarray, floor: float = PROB_FLOOR) -> float:
    """KL(p || q); terms with p = 0 vanish. Entries of q below both the
    floor and p are raised to the floor (then q is renormalized), which
    keeps the value finite and leaves KL(p || p) = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = p > 0
    low = m & (q < floor) & (q < p)
    if low.any():
        q = q.copy()
        q[low] = floor
        q = q / q.sum()
    return max(float(np.sum(p[m] * np.log(p[m] / q[m]))), 0.0)  # rounding can dip below 0


def kl_gap(I: Influence, I_hat: Influence, t: int, d: tuple, floor: float = PROB_FLOOR) -> float:
    return kl_from(np.asarray(I.predict(t, d)), I_hat.predict(t, d), floor)


def reward_max(model: FactoredPosg) -> float:
    return model.reward.max_abs


def bound_constant(horizon: int, r_max: float) -> float:
    return 2.0 * horizon * horizon * r_max


@dataclass
class BoundReport:
    max_l1_gap: float
    max_kl_gap: float
    l1_bound: float
    kl_bound: float
    horizon: int
    r_max: float
    n_y: int
    n_dh: int
    gaps: list = field(default_factory=list, repr=False)  # (t, d, l1, kl)

    CSV_FIELDS = ("max_l1_gap", "max_kl_gap", "l1_bound", "kl_bound", "horizon", "r_max",
                  "n_y", "n_dh")

    def csv_row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.CSV_FIELDS}

    def dump_gaps(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,dset,l1,kl\n")
            for t, d, l1, kl in self.gaps:
                fh.write(f"{t},{' '.join('.'.join(map(str, r)) for r in d)},{float(l1)!r},{float(kl)!r}\n")


def loss_bounds(model: FactoredPosg, I: ExactInfluence, I_hat: Influence,
                floor: float = PROB_FLOOR) -> BoundReport:
    """1-norm and KL bounds with the max over d-sets reachable under I."""
    gaps = []
    for t, d in I.reachable():
        p = I.predict(t, d)
        q = I_hat.predict(t, d)
        gaps.append((t, d, float(np.abs(p - q).sum()), kl_from(p, q, floor)))
    max_l1 = max(g[2] for g in gaps)
    max_kl = max(max(g[3] for g in gaps), 0.0)
    c = bound_constant(model.horizon, reward_max(model))
    return BoundReport(max_l1, max_kl, c * max_l1, c * math.sqrt(2.0 * max_kl), model.horizon,
                       reward_max(model), I.n_y, I.n_dsets(), gaps)


def loss_bound_l1(model, I, I_hat) -> BoundReport:
    return loss_bounds(model, I, I_hat)


def loss_bound_kl(model, I, I_hat) -> BoundReport:
    return loss_bounds(model, I, I_hat)


# -- sample-based bound --------------------------------------------------------


def hoeffding_confidence(horizon: int, n_dh: int, n_y: int, n: int, eps: float) -> float:
    return 1.0 - horizon * n_dh * (2 ** n_y - 2) * math.exp(-n * eps * eps / 2.0)


@dataclass
class ProbBound:
    bound: float          # 2h^2|R| (gap + eps)
    bound_literal: float  # 2h^2|R| gap + eps
    confidence: float
    max_gap: float


def prob_bound(model: FactoredPosg, empirical, I_hat: Influence, n: int, eps: float,
               dsets=None) -> ProbBound:
    """Bound from an empirical influence with at least ``n`` samples per d-set.

    ``dsets`` lists the (t, d) pairs to maximize over; it defaults to the
    keys of the empirical influence.
    """
    keys = list(dsets) if dsets is not None else [
        (t, d) for t in range(1, empirical.horizon + 1) for d in empirical.counts[t]]
    short = [(t, d, empirical.support(t, d)) for t, d in keys if empirical.support(t, d) < n]
    if short:
        raise UndersampledError(f"{len(short)} d-sets have fewer than {n} samples: {short[:5]}")
    gap = max(float(np.abs(empirical.predict(t, d) - I_hat.predict(t, d)).sum())
              for t, d in keys)
    h = model.horizon
    n_dh = sum(1 for t, _ in keys if t == h)
    c = bound_constant(h, reward_max(model))
    return ProbBound(c * (gap + eps), c * gap + eps,
                     hoeffding_confidence(h, n_dh, empirical.n_y, n, eps), gap)


# -- transition-level check ----------------------------------------------------


@dataclass
class TransitionGapReport:
    rows: int
    violations: int
    max_row_gap: float
    max_slack: float  # max of row gap minus influence gap
    row_gap_bound: float


def transition_gap_check(ialm: Ialm, ialm_hat: Ialm, I: Influence, I_hat: Influence,
                         tol: float = 1e-9) -> TransitionGapReport:
    """Row-wise ||T - T_hat||_1 <= ||I - I_hat||_1 over every (s, a) of ``ialm``."""
    if ialm.horizon != ialm_hat.horizon or ialm.n_actions != ialm_hat.n_actions:
        raise ValueError("IALMs differ in horizon or action count")
    model, local = ialm.model, ialm.local
    if model is None or model is not ialm_hat.model:
        raise ValueError("IALMs were built from different models")
    rows = viol = 0
    max_gap = 0.0
    max_slack = -np.inf
    for t in range(1, ialm.horizon + 1):
        for x, d in ialm.states[t - 1]:
            p, q = I.predict(t, d), I_hat.predict(t, d)
            igap = float(np.abs(p - q).sum())
            for a in range(ialm.n_actions):
                r1 = {x2: w for w, x2 in local_successors(model, local, x, a, p)}
                r2 = {x2: w for w, x2 in local_successors(model, local, x, a, q)}
                g = sum(abs(r1.get(k, 0.0) - r2.get(k, 0.0)) for k in set(r1) | set(r2))
                rows += 1
                max_gap = max(max_gap, g)
                max_slack = max(max_slack, g - igap)
                viol += g > igap + tol
    c = bound_constant(ialm.horizon, reward_max(model))
    return TransitionGapReport(rows, viol, max_gap, float(max_slack), c * max_gap)


# -- test-set estimators -------------------------------------------------------


@dataclass
class ErrorEstimates:
    error_ce: float
    error_norm1: float
    per_t_ce: list
    per_t_norm1: list
    n: int
    horizon: int

    def csv_row(self) -> dict:
        return {"error_ce": self.error_ce, "error_norm1": self.error_norm1}


def error_estimates(I_hat: Influence, ds: InfluenceDataset,
                    floor: float = PROB_FLOOR) -> ErrorEstimates:
    P = np.asarray(I_hat.predict_dataset(ds), dtype=float)
    py = np.take_along_axis(P, ds.y[..., None], axis=2)[..., 0]
    pc = np.take_along_axis(clamp(P, floor), ds.y[..., None], axis=2)[..., 0]
    ce = -np.log(pc)
    norm1 = np.abs(P).sum(axis=2) - py + np.abs(1.0 - py)
    per_ce = ce.mean(axis=0)
    per_n1 = norm1.mean(axis=0)
    return ErrorEstimates(float(per_ce.mean()), float(per_n1.mean()), per_ce.tolist(),
                          per_n1.tolist(), ds.n, ds.horizon)


def conditional_entropy(I: ExactInfluence) -> float:
    """Mean over t of H(y^t | d^t) under the deduction weights."""
    out = []
    for t in range(1, I.horizon + 1):
        h = 0.0
        for d, p in I.table[t].items():
            nz = p[p > 0]
            h -= I.weight[t][d] * float(np.sum(nz * np.log(nz)))
        out.append(h)
    return float(np.mean(out))


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("pearson needs two equal-length series of length >= 3")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("correlation of a constant series is undefined")
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))
