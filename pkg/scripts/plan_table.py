#!/usr/bin/env python3
"""Tabulate the planned (T*, b*) against the privacy budget for both mechanisms.

Constants are estimated once from the configured data, then only the budgets change.
"""

import argparse
import dataclasses
import sys

from fedsgd_dp import bounds, config, experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", "-c", help="experiment config (JSON); defaults to the built-in config")
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.5, 1, 2, 5, 10, 20])
    ap.add_argument("--delta", type=float, default=1e-5)
    ap.add_argument("--q", type=float, default=0.05, help="Gaussian sampling rate")
    ap.add_argument("--T-cap", dest="T_cap", type=int, default=1000)
    args = ap.parse_args()

    cfg = config.load(args.config) if args.config else config.ExperimentConfig()
    consts = experiment.resolve_constants(cfg, experiment.prepare_data(cfg))
    print(f"N={consts.N} d={consts.d:g} p={consts.p} mu={consts.mu:g} lam={consts.lam:.4g} "
          f"G={consts.G:.4g} Gamma={consts.Gamma:.4g} Y0={consts.Y0:.4g}")
    print(f"{'epsilon':>8}{'laplace T*':>12}{'b*':>5}{'bound':>12}{'gaussian T*':>13}{'b*':>5}{'bound':>12}")
    for eps in args.epsilons:
        N = consts.N
        lap = dataclasses.replace(consts, epsilons=(eps,) * N)
        gau = dataclasses.replace(consts, epsilons=(eps,) * N, deltas=(args.delta,) * N, q=args.q)
        pl = bounds.make_plan("laplace", lap, args.T_cap)
        pg = bounds.make_plan("gaussian", gau, args.T_cap)
        print(f"{eps:>8g}{pl.T:>12}{pl.b:>5}{pl.selected.bound_value:>12.4g}"
              f"{pg.T:>13}{pg.b:>5}{pg.selected.bound_value:>12.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
