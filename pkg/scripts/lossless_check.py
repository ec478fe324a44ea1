#!/usr/bin/env python3
"""Compare the exact-influence IALM optimum with a brute-force best response."""

import time

from aiba.domains import build_domain
from aiba.influence import deduce_exact_influence
from aiba.planner import brute_force_best_response, build_ialm, value_iteration

CASES = ([("rover", dict(track_length=L, horizon=h)) for L in (1, 2, 3) for h in (1, 2, 3, 4)]
         + [("firefighters", dict(horizon=h)) for h in (1, 2, 3)]
         + [("guess", {}), ("traffic", dict(horizon=2))])


def main():
    worst = 0.0
    for name, kw in CASES:
        t0 = time.perf_counter()
        model, local = build_domain(name, **kw)
        exact = deduce_exact_influence(model, local)
        v_ialm = value_iteration(build_ialm(model, local, exact))[2]
        v_br = brute_force_best_response(model, local)
        worst = max(worst, abs(v_ialm - v_br))
        print(f"{name:<13} {str(kw):<34} ialm {v_ialm:+.10f}  brute force {v_br:+.10f}  "
              f"{time.perf_counter() - t0:.2f}s")
    print(f"max difference {worst:.2e}")


if __name__ == "__main__":
    main()
