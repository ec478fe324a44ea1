#!/usr/bin/env python3
"""Run a full experiment and render its charts.

    python3 scripts/run_experiment.py scripts/configs/rover.yaml runs/rover
"""

import argparse
import logging
import time

from aiba.charts import render_all
from aiba.experiment import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig.load(args.config), args.out)
    print(f"{'epoch':>5} {'error_ce':>9} {'error_norm1':>11} {'value':>10} {'loss':>8}")
    for s in rep.summary:
        print(f"{s['epoch']:>5} {s['error_ce_mean']:>9.4f} {s['error_norm1_mean']:>11.4f} "
              f"{s['value_achieved_mean']:>10.4f} {s['loss_mean']:>8.4f}")
    print(f"pearson ce {rep.pearson_ce}, norm1 {rep.pearson_norm1}")
    for p in render_all(rep, f"{args.out}/charts"):
        print(f"wrote {p}")
    print(f"done in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
