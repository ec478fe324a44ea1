"""Command-line entry point.

    aiba <command> --config run.yaml [--seed k] [--out dir] [--iteration i]

Log verbosity comes from the ``AIBA_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .bounds import loss_bounds
from .domains import build_domain
from .influence import fit_empirical
from .simulator import load_dataset

COMMANDS = ("simulate", "deduce-exact", "fit-empirical", "train", "plan", "evaluate", "bounds",
            "report", "chart", "run")


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seeds={k: v + args.seed for k, v in cfg.seeds.items()})
    return cfg


def _out(args, cfg) -> Path:
    return Path(args.out) if args.out else Path("runs") / cfg.domain


def cmd_simulate(cfg, out, args):
    train, test = ex.stage_simulate(cfg, out, args.iteration)
    print(f"wrote {len(train)} training and {len(test)} test records to "
          f"{ex.iter_dir(out, args.iteration)}")


def cmd_deduce_exact(cfg, out, args):
    exact, v_opt = ex.stage_exact(cfg, out)
    if exact is None:
        print("exact influence exceeds the cap; no optimal value")
    else:
        print(f"{sum(1 for _ in exact.reachable())} reachable d-sets; optimal value {v_opt!r}")


def cmd_fit_empirical(cfg, out, args):
    d = ex.iter_dir(out, args.iteration)
    emp = fit_empirical(load_dataset(d / "dataset.txt"), args.smoothing)
    path = d / "empirical_counts.txt"
    with open(path, "w") as fh:
        for t in range(1, emp.horizon + 1):
            for key, c in emp.counts[t].items():
                toks = " ".join(".".join("_" if v == -1 else str(v) for v in r) for r in key)
                fh.write(f"{t},{toks},{' '.join(str(int(v)) for v in c)}\n")
    print(f"wrote {path}")


def cmd_train(cfg, out, args):
    cks = ex.stage_train(cfg, out, args.iteration)
    print(f"wrote {len(cks)} checkpoints")


def cmd_plan(cfg, out, args):
    plans = ex.stage_plan(cfg, out, args.iteration)
    for e, (_, v) in sorted(plans.items()):
        print(f"epoch {e}: IALM value {float(v)!r}")


def cmd_evaluate(cfg, out, args):
    for r in ex.stage_evaluate(cfg, out, args.iteration):
        print(f"epoch {r['epoch']}: value {r['value_achieved']!r} (se {r['value_se']!r}), "
              f"error_ce {r['error_ce']:.5f}")


def cmd_bounds(cfg, out, args):
    if args.influence == "exact":
        exact, _ = ex.load_exact_stage(cfg, out)
        if exact is None:
            raise SystemExit("no exact influence in this run directory")
        model, _ = build_domain(cfg.domain, **cfg.overrides)
        rep = loss_bounds(model, exact, exact)
        print(f"l1_bound {float(rep.l1_bound)!r} kl_bound {float(rep.kl_bound)!r}")
        return
    for r in ex.stage_bounds(cfg, out, args.iteration):
        print(f"epoch {r['epoch']}: l1_bound {r['l1_bound']:.4f} kl_bound {r['kl_bound']:.4f}")


def _report(out):
    rows = ex.assemble_report(out)
    ex.write_report(rows, out / "report.csv")
    rep = ex.summarize(rows)
    ex.write_summary(rep, out / "summary.csv")
    return rep


def cmd_report(cfg, out, args):
    rep = _report(out)
    print(f"{len(rep.rows)} rows; pearson(error_ce, {rep.correlation_target}) = {rep.pearson_ce}; "
          f"pearson(error_norm1, {rep.correlation_target}) = {rep.pearson_norm1}")


def cmd_chart(cfg, out, args):
    from .charts import render_all
    rep = ex.summarize(ex.read_report(out / "report.csv"))
    for p in render_all(rep, out / "charts"):
        print(f"wrote {p}")


def cmd_run(cfg, out, args):
    rep = ex.run_experiment(cfg, out)
    print(f"{len(rep.rows)} rows; pearson(error_ce, {rep.correlation_target}) = {rep.pearson_ce}")


HANDLERS = {name: globals()[f"cmd_{name.replace('-', '_')}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aiba", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config (YAML)")
    p.add_argument("--seed", type=int, help="shift every role seed by this amount")
    p.add_argument("--out", help="run directory (default runs/<domain>)")
    p.add_argument("--iteration", type=int, default=0, help="iteration index for stage commands")
    p.add_argument("--smoothing", type=float, default=0.0, help="fit-empirical smoothing")
    p.add_argument("--influence", choices=("neural", "exact"), default="neural",
                   help="influence scored by the bounds command")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AIBA_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = _out(args, cfg)
        HANDLERS[args.command](cfg, out, args)
    except (FileNotFoundError, ValueError, ex.StageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
