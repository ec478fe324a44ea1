#!/usr/bin/env python3
"""Coverage of the sample-based loss bound on the guess domain.

Each resample draws n outcomes per reachable d-set from the exact influence,
forms the empirical influence and checks whether the fixed approximation's
value loss stays under the bound.
"""

import argparse

import numpy as np

from aiba.bounds import bound_constant, hoeffding_confidence
from aiba.domains import build_domain
from aiba.influence import deduce_exact_influence, perturb
from aiba.planner import build_ialm, execute_local_policy, value_iteration
from aiba.simulator import evaluate_policy_exact


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.08, 0.1, 0.15])
    ap.add_argument("--resamples", type=int, default=10_000)
    ap.add_argument("--scale", type=float, default=0.6, help="perturbation of the approximation")
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    model, local = build_domain("guess")
    exact = deduce_exact_influence(model, local)
    keys = list(exact.reachable())
    approx = perturb(exact, args.scale, seed=11)
    v_star = value_iteration(build_ialm(model, local, exact))[2]
    _, pol, _ = value_iteration(build_ialm(model, local, approx))
    loss = v_star - evaluate_policy_exact(model, local,
                                          execute_local_policy(pol, local, model.n_actions))

    rng = np.random.default_rng(args.seed)
    emp = {k: rng.multinomial(args.n, exact.predict(*k), size=args.resamples) / args.n
           for k in keys}
    gap = np.max([np.abs(emp[k] - approx.predict(*k)).sum(axis=1) for k in keys], axis=0)
    dev = np.max([np.abs(emp[k] - exact.predict(*k)).sum(axis=1) for k in keys], axis=0)
    c = bound_constant(model.horizon, model.reward.max_abs)
    print(f"loss {loss:.5f}, {len(keys)} reachable d-sets, n = {args.n}, "
          f"{args.resamples} resamples")
    print(f"{'eps':>6} {'confidence':>11} {'P(dev<=eps)':>12} {'coverage':>9} {'literal':>8}")
    for eps in args.eps:
        conf = hoeffding_confidence(model.horizon, exact.n_dsets(), exact.n_y, args.n, eps)
        print(f"{eps:>6.3f} {conf:>11.5f} {np.mean(dev <= eps):>12.5f} "
              f"{np.mean(loss <= c * (gap + eps)):>9.5f} {np.mean(loss <= c * gap + eps):>8.5f}")


if __name__ == "__main__":
    main()
