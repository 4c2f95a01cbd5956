"""Run configured experiments: data preparation, (T, b) resolution, repeated trials, results files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds, data, model
from .bounds import BoundConstants, Plan
from .config import AUTO, ConfigError, ExperimentConfig, with_overrides
from .data import ClientPartition, Dataset
from .estimate import ProbeConfig, estimate_constants
from .federation import FederationSchedule, TrainingTrace, reference_optimum, run_federation
from .mechanisms import Mechanism

log = logging.getLogger(__name__)

TRIAL_SEED_STRIDE = 1_000_003
TRACE_COLUMNS = ["trial", "t", "loss", "acc", "eta", "dist"]
SWEEP_AXES = ("b", "T", "epsilon", "data_fraction")
_AXIS_KEYS = {
    "b": "schedule.b",
    "T": "schedule.T",
    "epsilon": "budget.epsilon",
    "data_fraction": "partition.data_fraction",
}


def trial_seed(base_seed: int, k: int) -> int:
    return base_seed + k * TRIAL_SEED_STRIDE


@dataclass
class PreparedData:
    partition: ClientPartition
    test: Dataset | None
    optimum: np.ndarray


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    dc = cfg.dataset
    test = None
    if dc.source == "synthetic":
        full = data.make_synthetic_dataset(dc.n_samples, dc.n_features, dc.n_classes, dc.class_separation, dc.seed)
        if dc.n_test:
            train, test = data.train_test_split(full, dc.n_test, dc.seed + 1)
        else:
            train = full
    elif dc.source == "idx":
        train = data.load_idx_dataset(dc.image_path, dc.label_path, dc.n_classes)
        if dc.test_image_path and dc.test_label_path:
            test = data.load_idx_dataset(dc.test_image_path, dc.test_label_path, dc.n_classes)
    else:
        train = data.load_csv(dc.csv_path, dc.n_classes)
        if dc.test_csv_path:
            test = data.load_csv(dc.test_csv_path, dc.n_classes)
    if dc.scale:
        if test is not None:
            test = data.scale_to_unit_ball(test, train)
        train = data.scale_to_unit_ball(train)
    pc = cfg.partition
    part = data.partition_noniid(train, pc.N, pc.classes_per_client, pc.seed)
    if pc.data_fraction < 1:
        part = data.subsample_partition(part, pc.data_fraction, pc.seed + 1)
    return PreparedData(part, test, reference_optimum(part, cfg.schedule.l2))


def resolve_constants(cfg: ExperimentConfig, prepared: PreparedData) -> BoundConstants:
    cc = cfg.constants
    if cc.source == "file":
        try:
            return BoundConstants.load(cc.path)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"constants.path: cannot load {cc.path}: {exc}") from exc
    probe = ProbeConfig(
        l2=cfg.schedule.l2,
        spec=cfg.mechanism.build(),
        budgets=cfg.budget.build(cfg.partition.N),
        mu=cfg.schedule.mu,
        lam=cfg.schedule.lam,
        lambda_mode=cc.lambda_mode,
    )
    return estimate_constants(prepared.partition, probe)


def resolve_schedule(cfg: ExperimentConfig, consts: BoundConstants | None) -> tuple[int, int, Plan | None]:
    """``(b, T, plan)``; the plan is only built when either coordinate is ``auto``."""
    sc = cfg.schedule
    if not cfg.is_auto:
        return int(sc.b), int(sc.T), None
    mech = Mechanism(cfg.mechanism.kind)
    plan = bounds.make_plan(mech, consts, sc.T_cap)
    b, T = plan.b, plan.T
    if sc.b != AUTO:
        b = int(sc.b)
        if mech is Mechanism.LAPLACE:
            cT = bounds.optimal_T_fixed_b_laplace(consts, b)
            T, _, _ = bounds.integerize(bounds.bound_laplace, consts, cT, b, sc.T_cap)
        else:
            T = bounds.optimal_gaussian(consts, sc.T_cap).T
    elif sc.T != AUTO:
        T = int(sc.T)
        if mech is Mechanism.LAPLACE:
            cb = bounds.optimal_b_fixed_T_laplace(consts, T)
            _, b, _ = bounds.integerize(bounds.bound_laplace, consts, T, cb, sc.T_cap)
        else:
            b = consts.N
    return b, T, plan


@dataclass
class ResultsFile:
    output_dir: Path
    config: ExperimentConfig
    b: int
    T: int
    traces: list[TrainingTrace]
    final_loss: np.ndarray
    final_acc: np.ndarray
    plan: Plan | None = None
    constants: BoundConstants | None = None
    seeds: list[int] = field(default_factory=list)

    @property
    def final_loss_mean(self) -> float:
        return float(np.mean(self.final_loss))

    @property
    def final_acc_mean(self) -> float:
        return float(np.mean(self.final_acc))

    def summary(self) -> dict:
        return {
            "b": self.b,
            "T": self.T,
            "repeat": len(self.traces),
            "seeds": self.seeds,
            "final_loss_mean": self.final_loss_mean,
            "final_loss_std": _std(self.final_loss),
            "final_acc_mean": self.final_acc_mean,
            "final_acc_std": _std(self.final_acc),
            "final_loss": [float(v) for v in self.final_loss],
            "final_acc": [float(v) for v in self.final_acc],
            "config": self.config.to_dict(),
            "constants": self.constants.to_dict() if self.constants is not None else None,
            "plan": self.plan.to_dict() if self.plan is not None else None,
        }


def _std(x) -> float:
    # sample std across trials; zero for a single trial
    x = np.asarray(x, dtype=np.float64)
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def _final(trace: TrainingTrace, prepared: PreparedData, l2: float) -> tuple[float, float]:
    if trace.records:
        r = trace.records[-1]
        return r.train_loss, r.test_acc
    theta = trace.initial_params
    acc = model.accuracy(theta, prepared.test) if prepared.test is not None else math.nan
    return model.loss(theta, prepared.partition.pooled(), l2), acc


def trace_csv(traces: list[TrainingTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for k, tr in enumerate(traces):
        for r in tr.records:
            w.writerow([k, r.t, repr(r.train_loss), repr(r.test_acc), repr(r.eta_t), repr(r.dist_sq_opt)])
    return buf.getvalue()


def aggregate_csv(traces: list[TrainingTrace]) -> str:
    """Per-round mean and sample std across trials."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "loss_mean", "loss_std", "acc_mean", "acc_std", "dist_mean", "dist_std"])
    T = len(traces[0]) if traces else 0
    cols = {name: np.stack([tr.column(name) for tr in traces]) for name in ("train_loss", "test_acc", "dist_sq_opt")}
    for t in range(T):
        row = [t]
        for name in ("train_loss", "test_acc", "dist_sq_opt"):
            v = cols[name][:, t]
            row += [repr(float(np.mean(v))), repr(_std(v))]
        w.writerow(row)
    return buf.getvalue()


def _write_text(directory: Path, name: str, text: str) -> None:
    with open(directory / name, "w", newline="") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, prepared: PreparedData | None = None, write: bool = True) -> ResultsFile:
    """Resolve ``(b, T)``, run ``repeat`` trials and write the results directory atomically.

    Outputs are assembled in a sibling temporary directory and renamed into
    place, so an aborted run leaves nothing behind.
    """
    cfg.validate()
    prepared = prepared if prepared is not None else prepare_data(cfg)
    consts = resolve_constants(cfg, prepared) if cfg.is_auto else None
    b, T, plan = resolve_schedule(cfg, consts)
    if not 1 <= b <= cfg.partition.N:
        raise ConfigError(f"resolved b={b} outside [1, {cfg.partition.N}]")
    spec = cfg.mechanism.build()
    budgets = cfg.budget.build(cfg.partition.N)
    sc = cfg.schedule
    mu = sc.mu if sc.mu is not None else sc.l2
    lam = sc.lam if sc.lam is not None else model.smoothness_constant(prepared.partition.pooled(), sc.l2)

    traces, losses, accs, seeds = [], [], [], []
    for k in range(cfg.repeat):
        seed = trial_seed(cfg.seed, k)
        schedule = FederationSchedule(
            N=cfg.partition.N, b=b, T=T, mu=mu, lam=lam, l2=sc.l2,
            base_seed=seed, selection=sc.selection, init=sc.init,
        )
        tr = run_federation(prepared.partition, spec, budgets, schedule, prepared.optimum, prepared.test)
        fl, fa = _final(tr, prepared, sc.l2)
        traces.append(tr)
        losses.append(fl)
        accs.append(fa)
        seeds.append(seed)
        log.debug("trial %d: final loss %.6g", k, fl)

    res = ResultsFile(Path(cfg.output_dir), cfg, b, T, traces, np.array(losses), np.array(accs), plan, consts, seeds)
    if write:
        _persist(res)
    return res


def _persist(res: ResultsFile) -> None:
    out = res.output_dir
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        _write_text(tmp, "trace.csv", trace_csv(res.traces))
        _write_text(tmp, "aggregate.csv", aggregate_csv(res.traces))
        _write_text(tmp, "summary.json", json.dumps(res.summary(), indent=2, default=_json_default) + "\n")
        if res.plan is not None:
            _write_text(tmp, "plan.json", json.dumps(res.plan.to_dict(), indent=2, default=_json_default) + "\n")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class SweepRow:
    value: object
    final_loss_mean: float = math.nan
    final_loss_std: float = math.nan
    final_acc_mean: float = math.nan
    final_acc_std: float = math.nan
    b: int | None = None
    T: int | None = None
    error: str | None = None


def sweep(cfg: ExperimentConfig, axis: str, values) -> tuple[list[SweepRow], list[ResultsFile]]:
    """One :func:`run_experiment` per value under ``output_dir/<axis>=<value>``.

    A failing value is recorded in its row and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = Path(cfg.output_dir)
    rows, results = [], []
    for v in values:
        try:
            sub = with_overrides(cfg, [(_AXIS_KEYS[axis].split("."), v), (["output_dir"], str(base / f"{axis}={v}"))])
            res = run_experiment(sub)
        except Exception as exc:  # noqa: BLE001 - reported per value
            log.warning("sweep %s=%s failed: %s", axis, v, exc)
            rows.append(SweepRow(v, error=f"{type(exc).__name__}: {exc}"))
            continue
        s = res.summary()
        rows.append(SweepRow(v, s["final_loss_mean"], s["final_loss_std"], s["final_acc_mean"], s["final_acc_std"], res.b, res.T))
        results.append(res)
    _write_sweep_summary(base, axis, rows)
    return rows, results


def _write_sweep_summary(base: Path, axis: str, rows: list[SweepRow]) -> None:
    base.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis, "b", "T", "final_loss_mean", "final_loss_std", "final_acc_mean", "final_acc_std", "error"])
    for r in rows:
        w.writerow([r.value, r.b, r.T, repr(r.final_loss_mean), repr(r.final_loss_std),
                    repr(r.final_acc_mean), repr(r.final_acc_std), r.error or ""])
    tmp = base / ".sweep_summary.csv.tmp"
    tmp.write_text(buf.getvalue())
    os.replace(tmp, base / "sweep_summary.csv")


def format_sweep(axis: str, rows: list[SweepRow]) -> str:
    lines = [f"{axis:>14}{'b':>5}{'T':>8}{'loss':>12}{'±':>10}{'acc':>9}{'±':>8}"]
    for r in rows:
        if r.error:
            lines.append(f"{r.value!s:>14}  failed: {r.error}")
        else:
            lines.append(
                f"{r.value!s:>14}{r.b:>5}{r.T:>8}{r.final_loss_mean:>12.5g}{r.final_loss_std:>10.3g}"
                f"{r.final_acc_mean:>9.4f}{r.final_acc_std:>8.3g}"
            )
    return "\n".join(lines)
