"""End-to-end runs: collect, train, plan, evaluate, score and report.

A run directory holds one sub-directory per iteration plus shared files::

    run/
      config.yaml  exact_influence.txt  optimal.json  report.csv  summary.csv
      iter_000/
        dataset.txt  test_dataset.txt  checkpoints/epoch_005.bin
        plans/epoch_005.policy  evaluation.csv  bounds.csv

Every stage reads and writes these files, so stages can run separately
from the command line or all at once through ``run_experiment``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .bounds import UndefinedCorrelationError, error_estimates, loss_bounds, pearson
from .domains import build_domain
from .influence import deduce_exact_influence, dump_exact, load_exact
from .model import CapacityError, y_cardinalities
from .neural import NeuralInfluence, TrainConfig, train_neural
from .planner import (LocalPolicy, build_ialm, dump_policy, execute_local_policy,
                      value_iteration)
from .simulator import (UniformPolicy, collect_dataset, evaluate_policy_exact,
                        evaluate_policy_mc, load_dataset, save_dataset)

log = logging.getLogger(__name__)

REPORT_HEADER = ("iteration", "epoch", "error_ce", "error_norm1", "value_achieved", "value_se",
                 "value_optimal", "loss", "l1_bound", "kl_bound")
ROLES = ("simulation", "training", "test", "evaluation")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    domain: str = "rover"
    overrides: dict = field(default_factory=dict)
    n_train: int = 10000
    n_test: int | None = None
    m_eval: int | None = None
    seeds: dict = field(default_factory=lambda: {"simulation": 1, "training": 2, "test": 3,
                                                 "evaluation": 4})
    train: TrainConfig = field(default_factory=TrainConfig)
    checkpoint_every: int = 1
    iterations: int = 10
    evaluation: str = "auto"
    bounds: bool = True
    exact_cap: int = 10**7

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.n_train < 1 or (self.n_test is not None and self.n_test < 1):
            raise ValueError("sample sizes must be >= 1")
        if self.m_eval is not None and self.m_eval < 2:
            raise ValueError("m_eval must be >= 2")
        if set(self.seeds) != set(ROLES):
            raise ValueError(f"seeds must name exactly the roles {ROLES}")
        if len(set(self.seeds.values())) != len(ROLES):
            raise ValueError("seeds must be distinct by role")
        if self.evaluation not in ("auto", "exact", "mc"):
            raise ValueError(f"unknown evaluation mode {self.evaluation!r}")
        if self.checkpoint_every < 1 or self.iterations < 1:
            raise ValueError("checkpoint_every and iterations must be >= 1")

    @property
    def test_size(self) -> int:
        return self.n_test or self.n_train

    @property
    def mc_size(self) -> int:
        return self.m_eval or 10 * self.n_train

    def seed(self, role: str, iteration: int) -> int:
        ss = np.random.SeedSequence([int(self.seeds[role]), ROLES.index(role), iteration])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def checkpoint_epochs(self) -> list[int]:
        return [e for e in range(1, self.train.epochs + 1)
                if e % self.checkpoint_every == 0 or self.checkpoint_every > self.train.epochs]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


def iter_dir(out: Path, iteration: int) -> Path:
    return Path(out) / f"iter_{iteration:03d}"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in header])


def _read_csv(path: Path) -> list[dict]:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing file {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(s: str):
    return None if s in ("", None) else float(s)


# -- stages --------------------------------------------------------------------


def stage_exact(cfg: ExperimentConfig, out: Path):
    """Exact influence and the optimal value, or (None, None) past the cap."""
    model, local = build_domain(cfg.domain, **cfg.overrides)
    try:
        exact = deduce_exact_influence(model, local, cap=cfg.exact_cap)
        _, _, v_opt = value_iteration(build_ialm(model, local, exact))
    except CapacityError as e:
        log.info("no exact influence: %s", e)
        exact, v_opt = None, None
    out.mkdir(parents=True, exist_ok=True)
    if exact is not None:
        dump_exact(exact, out / "exact_influence.txt")
    (out / "optimal.json").write_text(json.dumps({"value_optimal": v_opt}) + "\n")
    return exact, v_opt


def load_exact_stage(cfg: ExperimentConfig, out: Path):
    opt = json.loads((Path(out) / "optimal.json").read_text())["value_optimal"]
    path = Path(out) / "exact_influence.txt"
    if not path.exists():
        return None, opt
    model, local = build_domain(cfg.domain, **cfg.overrides)
    n_y = int(np.prod(y_cardinalities(model, local)))
    return load_exact(path, n_y, model.horizon), opt


def stage_simulate(cfg: ExperimentConfig, out: Path, iteration: int):
    model, local = build_domain(cfg.domain, **cfg.overrides)
    d = iter_dir(out, iteration)
    d.mkdir(parents=True, exist_ok=True)
    pol = UniformPolicy(model.n_actions)
    train = collect_dataset(model, local, pol, cfg.n_train, cfg.seed("simulation", iteration),
                            domain=cfg.domain)
    test = collect_dataset(model, local, pol, cfg.test_size, cfg.seed("test", iteration),
                           domain=cfg.domain)
    save_dataset(train, d / "dataset.txt")
    save_dataset(test, d / "test_dataset.txt")
    return train, test


def stage_train(cfg: ExperimentConfig, out: Path, iteration: int, train=None):
    d = iter_dir(out, iteration)
    if train is None:
        train = load_dataset(d / "dataset.txt")
    keep = set(cfg.checkpoint_epochs())
    ck_dir = d / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    cks = [c for c in train_neural(train, cfg.train, cfg.seed("training", iteration))
           if c.epoch in keep]
    for c in cks:
        c.save(ck_dir / f"epoch_{c.epoch:03d}.bin")
    return cks


def load_checkpoints(out: Path, iteration: int) -> list[NeuralInfluence]:
    ck_dir = iter_dir(out, iteration) / "checkpoints"
    paths = sorted(ck_dir.glob("epoch_*.bin"))
    if not paths:
        raise FileNotFoundError(f"no checkpoints in {ck_dir}")
    return [NeuralInfluence.load(p) for p in paths]


def stage_plan(cfg: ExperimentConfig, out: Path, iteration: int, cks=None):
    model, local = build_domain(cfg.domain, **cfg.overrides)
    if cks is None:
        cks = load_checkpoints(out, iteration)
    plan_dir = iter_dir(out, iteration) / "plans"
    plan_dir.mkdir(parents=True, exist_ok=True)
    plans = {}
    for c in cks:
        _, pol, v_ialm = value_iteration(build_ialm(model, local, c))
        dump_policy(pol, plan_dir / f"epoch_{c.epoch:03d}.policy")
        plans[c.epoch] = (pol, v_ialm)
    return plans


def load_policy(path: str | Path) -> LocalPolicy:
    table: dict = {}
    with open(path) as fh:
        for line in fh:
            t_s, state, a_s = line.rstrip("\n").split(",")
            xs, ds = state.split("|")
            x = tuple(int(v) for v in xs.split(".")) if xs else ()
            d = tuple(tuple(-1 if v == "_" else int(v) for v in tok.split("."))
                      for tok in ds.split(" "))
            table.setdefault(int(t_s), {})[(x, d)] = int(a_s)
    return LocalPolicy(table)


def evaluate_policy(cfg: ExperimentConfig, policy: LocalPolicy, iteration: int):
    """(value, standard error, fallback count) in the global model."""
    model, local = build_domain(cfg.domain, **cfg.overrides)
    ex = execute_local_policy(policy, local, model.n_actions)
    if cfg.evaluation in ("auto", "exact"):
        try:
            return evaluate_policy_exact(model, local, ex, cap=cfg.exact_cap), 0.0, ex.misses
        except CapacityError:
            if cfg.evaluation == "exact":
                raise
    mean, se = evaluate_policy_mc(model, local, ex, cfg.mc_size, cfg.seed("evaluation", iteration))
    return mean, se, ex.misses


def stage_evaluate(cfg: ExperimentConfig, out: Path, iteration: int, cks=None, plans=None,
                   test=None):
    d = iter_dir(out, iteration)
    if cks is None:
        cks = load_checkpoints(out, iteration)
    if test is None:
        test = load_dataset(d / "test_dataset.txt")
    rows = []
    for c in cks:
        pol = plans[c.epoch][0] if plans else load_policy(d / "plans" / f"epoch_{c.epoch:03d}.policy")
        err = error_estimates(c, test)
        value, se, misses = evaluate_policy(cfg, pol, iteration)
        rows.append({"epoch": c.epoch, "error_ce": err.error_ce, "error_norm1": err.error_norm1,
                     "value_achieved": value, "value_se": se, "fallbacks": misses})
    _write_csv(d / "evaluation.csv", ("epoch", "error_ce", "error_norm1", "value_achieved",
                                      "value_se", "fallbacks"), rows)
    return rows


def stage_bounds(cfg: ExperimentConfig, out: Path, iteration: int, exact=None, cks=None):
    model, _ = build_domain(cfg.domain, **cfg.overrides)
    if exact is None:
        exact, _ = load_exact_stage(cfg, out)
    d = iter_dir(out, iteration)
    rows = []
    if exact is not None and cfg.bounds:
        for c in cks if cks is not None else load_checkpoints(out, iteration):
            rep = loss_bounds(model, exact, c)
            rows.append({"epoch": c.epoch, **rep.csv_row()})
    _write_csv(d / "bounds.csv", ("epoch", "max_l1_gap", "max_kl_gap", "l1_bound", "kl_bound"),
               rows)
    return rows


# -- report --------------------------------------------------------------------


def assemble_report(out: Path) -> list[dict]:
    """One row per (iteration, checkpoint) from the stage files of a run."""
    out = Path(out)
    opt_path = out / "optimal.json"
    v_opt = json.loads(opt_path.read_text())["value_optimal"] if opt_path.exists() else None
    its = sorted(out.glob("iter_*"))
    if not its:
        raise FileNotFoundError(f"no iteration directories in {out}")
    rows = []
    for d in its:
        it = int(d.name.split("_")[1])
        ev = _read_csv(d / "evaluation.csv")
        bd = {int(r["epoch"]): r for r in _read_csv(d / "bounds.csv")} \
            if (d / "bounds.csv").exists() else {}
        for r in ev:
            e = int(r["epoch"])
            v = float(r["value_achieved"])
            b = bd.get(e, {})
            rows.append({"iteration": it, "epoch": e, "error_ce": float(r["error_ce"]),
                         "error_norm1": float(r["error_norm1"]), "value_achieved": v,
                         "value_se": float(r["value_se"]), "value_optimal": v_opt,
                         "loss": None if v_opt is None else v_opt - v,
                         "l1_bound": _num(b.get("l1_bound")), "kl_bound": _num(b.get("kl_bound"))})
    return rows


def write_report(rows: list[dict], path: Path) -> None:
    _write_csv(path, REPORT_HEADER, rows)


def read_report(path: Path) -> list[dict]:
    rows = _read_csv(path)
    if not rows or tuple(rows[0].keys()) != REPORT_HEADER:
        raise ValueError(f"{path}: report header mismatch")
    out = []
    for r in rows:
        row = {k: _num(v) for k, v in r.items()}
        row["iteration"] = int(row["iteration"])
        row["epoch"] = int(row["epoch"])
        out.append(row)
    return out


@dataclass
class ExperimentReport:
    rows: list[dict]
    summary: list[dict]
    pearson_ce: float | None
    pearson_norm1: float | None
    correlation_target: str

    def epochs(self) -> list[int]:
        return [s["epoch"] for s in self.summary]

    def series(self, key: str, stat: str = "mean") -> np.ndarray:
        return np.array([s[f"{key}_{stat}"] for s in self.summary], dtype=float)


SUMMARY_KEYS = ("error_ce", "error_norm1", "value_achieved", "loss", "l1_bound", "kl_bound")


def summarize(rows: list[dict]) -> ExperimentReport:
    by_epoch: dict = {}
    for r in rows:
        by_epoch.setdefault(r["epoch"], []).append(r)
    summary = []
    for e in sorted(by_epoch):
        rs = by_epoch[e]
        s = {"epoch": e, "n": len(rs)}
        for k in SUMMARY_KEYS:
            vals = [r[k] for r in rs if r.get(k) is not None]
            if vals:
                a = np.array(vals, dtype=float)
                s[f"{k}_mean"] = float(a.mean())
                s[f"{k}_std"] = float(a.std(ddof=1)) if len(a) > 1 else 0.0
                s[f"{k}_se"] = s[f"{k}_std"] / np.sqrt(len(a))
        summary.append(s)
    has_loss = all("loss_mean" in s for s in summary)
    target = "loss" if has_loss else "-value"
    ys = [s["loss_mean"] if has_loss else -s["value_achieved_mean"] for s in summary]

    def corr(key):
        try:
            return pearson([s[f"{key}_mean"] for s in summary], ys)
        except (UndefinedCorrelationError, ValueError):
            return None

    return ExperimentReport(rows, summary, corr("error_ce"), corr("error_norm1"), target)


def write_summary(rep: ExperimentReport, path: Path) -> None:
    keys = ["epoch", "n"] + [f"{k}_{s}" for k in SUMMARY_KEYS for s in ("mean", "std", "se")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for s in rep.summary:
            w.writerow([_fmt(s.get(k)) for k in keys])
        w.writerow([])
        w.writerow(["correlation_target", rep.correlation_target])
        w.writerow(["pearson_error_ce", _fmt(rep.pearson_ce)])
        w.writerow(["pearson_error_norm1", _fmt(rep.pearson_norm1)])


def run_experiment(cfg: ExperimentConfig, out: str | Path) -> ExperimentReport:
    """Full loop over iterations; files land in ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except Exception as e:
            done = [d for d in sorted(out.glob("iter_*")) if (d / "evaluation.csv").exists()]
            if done:
                try:
                    write_report(assemble_report(out), out / "report.csv")
                except Exception:  # partial flush is best effort
                    pass
            raise StageError(name, e) from e

    exact, _ = stage("exact", stage_exact, cfg, out)
    for it in range(cfg.iterations):
        log.info("iteration %d", it)
        train, test = stage("simulate", stage_simulate, cfg, out, it)
        cks = stage("train", stage_train, cfg, out, it, train)
        plans = stage("plan", stage_plan, cfg, out, it, cks)
        stage("evaluate", stage_evaluate, cfg, out, it, cks, plans, test)
        stage("bounds", stage_bounds, cfg, out, it, exact, cks)
    rows = assemble_report(out)
    write_report(rows, out / "report.csv")
    rep = summarize(rows)
    write_summary(rep, out / "summary.csv")
    return rep
