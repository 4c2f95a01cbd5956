"""Command-line entry point: ``train``, ``sweep``, ``plan``, ``estimate``, ``validate``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import bounds, config, experiment, validation
from .bounds import BoundConstants
from .config import ConfigError, ExperimentConfig
from .data import PartitionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

log = logging.getLogger("fedsgd_dp")


def _load_config(args) -> ExperimentConfig:
    raw = ExperimentConfig().to_dict()
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be an object")
        raw = loaded
    overrides = list(args.set or [])
    for flag, key in (("seed", "seed"), ("repeat", "repeat"), ("out", "output_dir")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(([key], val))
    return config.from_dict(config.apply_overrides(raw, overrides))


def _add_config_args(p: argparse.ArgumentParser, out_help: str = "output directory") -> None:
    p.add_argument("--config", "-c", help="experiment config (JSON)")
    p.add_argument("--set", "-s", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. schedule.b=5 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeat", type=int)
    p.add_argument("--out", "-o", help=out_help)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    res = experiment.run_experiment(cfg)
    s = res.summary()
    print(f"b={res.b} T={res.T} repeat={s['repeat']} "
          f"final loss {s['final_loss_mean']:.6g} ± {s['final_loss_std']:.3g}, "
          f"accuracy {s['final_acc_mean']:.4f} ± {s['final_acc_std']:.3g}")
    if res.plan is not None:
        print(res.plan.table())
    print(f"results in {res.output_dir}")
    return EXIT_OK


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(json.loads(tok))
        except json.JSONDecodeError:
            out.append(tok)
    if not out:
        raise ConfigError("--values is empty")
    return out


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows, _ = experiment.sweep(cfg, args.axis, _parse_values(args.values))
    print(experiment.format_sweep(args.axis, rows))
    print(f"summary in {Path(cfg.output_dir) / 'sweep_summary.csv'}")
    return EXIT_RUNTIME if all(r.error for r in rows) else EXIT_OK


def cmd_plan(args) -> int:
    if args.constants:
        try:
            consts = BoundConstants.load(args.constants)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot load constants from {args.constants}: {exc}") from exc
        mechanism = args.mechanism or "laplace"
        T_cap = args.T_cap or 10_000
    elif args.config or args.set:
        cfg = _load_config(args)
        consts = experiment.resolve_constants(cfg, experiment.prepare_data(cfg))
        mechanism = args.mechanism or cfg.mechanism.kind
        T_cap = args.T_cap or cfg.schedule.T_cap
    else:
        raise ConfigError("plan needs --constants FILE or an experiment --config to estimate from")
    try:
        plan = bounds.make_plan(mechanism, consts, T_cap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(plan.table())
    if args.out:
        bounds.write_plan(plan, args.out)
        print(f"plan written to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    cfg = dataclasses.replace(
        cfg, constants=config.ConstantsConfig(source="estimate", lambda_mode=cfg.constants.lambda_mode)
    )
    est = experiment.resolve_constants(cfg, experiment.prepare_data(cfg))
    text = json.dumps({"constants": est.to_dict()}, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"constants written to {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    results = validation.run_all(seed=args.seed or 0, quick=args.quick)
    for r in results:
        print(r.line())
        for f in r.failures[1:5]:
            print(f"    {f}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsgd-dp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment (repeated trials)")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run one experiment per value of an axis")
    _add_config_args(p, "parent directory for the per-value runs")
    p.add_argument("--axis", required=True, choices=experiment.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1,5,10")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plan", help="optimal (T, b) from bound constants")
    _add_config_args(p, "write the plan JSON here")
    p.add_argument("--constants", help="constants JSON (as written by `estimate`)")
    p.add_argument("--mechanism", choices=["laplace", "gaussian"])
    p.add_argument("--T-cap", dest="T_cap", type=int)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("estimate", help="estimate bound constants from the configured data")
    _add_config_args(p, "write the constants JSON here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("validate", help="check analytic results against their oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="fewer cases and trials")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except PartitionError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime abort
        log.debug("aborted", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
