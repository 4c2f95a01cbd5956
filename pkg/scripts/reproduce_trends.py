#!/usr/bin/env python3
"""Run the reduced-scale trend experiments and print a results table.

Usage: python scripts/reproduce_trends.py [--repeat 10] [--seeds 0 1 2]
"""

import argparse
import sys
import time

from fedsgd_dp.trends import run_trends


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10, help="trials per setting")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0], help="base seeds to try")
    args = ap.parse_args()

    all_ok = True
    for seed in args.seeds:
        t0 = time.perf_counter()
        report = run_trends(repeat=args.repeat, seed=seed)
        checks = {
            "more rounds than T* hurts (Laplace)": report.overshoot_hurts(),
            "Gaussian loss non-increasing in b": report.gaussian_loss_nonincreasing_in_b(),
            "accuracy non-decreasing in epsilon": report.accuracy_nondecreasing_in_eps(),
            "planned (b*, T*) beats every baseline": report.planned_is_best(),
        }
        print(f"seed {seed}: b*={report.b_star} T*={report.T_star} ({time.perf_counter() - t0:.0f}s)")
        print(report.table())
        for name, ok in checks.items():
            print(f"  {'yes' if ok else 'NO '}  {name}")
        print()
        all_ok &= all(checks.values())
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
