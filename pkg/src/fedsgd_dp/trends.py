"""Reduced-scale trend experiments on the default synthetic 10-client task.

Each experiment returns plain numbers so callers can tabulate or assert on them.
All runs share the same data split and trial seeds, so settings are compared
under common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import experiment
from .config import ExperimentConfig, with_overrides

EPSILONS = (1.0, 5.0, 10.0)
GAUSSIAN_BS = (1, 5, 10)
GAUSSIAN_T = 100
GAUSSIAN_EPSILON = 5.0

# Gaussian settings: a small sampling rate keeps the b-dependent sampling noise visible
GAUSSIAN = [
    "mechanism.kind=gaussian",
    "mechanism.q=0.05",
    "mechanism.xi2=1.0",
    "budget.delta=1e-5",
]


@dataclass
class Setting:
    label: str
    b: int
    T: int
    loss: float
    acc: float


@dataclass
class TrendReport:
    b_star: int
    T_star: int
    planned: Setting
    baselines: list[Setting] = field(default_factory=list)
    gaussian_by_b: list[Setting] = field(default_factory=list)
    laplace_by_eps: list[Setting] = field(default_factory=list)
    gaussian_by_eps: list[Setting] = field(default_factory=list)

    def overshoot_hurts(self) -> bool:
        """Running ``5 T*`` rounds at ``b*`` ends at a higher loss than ``T*``."""
        long = next(s for s in self.baselines if s.b == self.b_star and s.T == 5 * self.T_star)
        return long.loss > self.planned.loss

    def gaussian_loss_nonincreasing_in_b(self) -> bool:
        losses = [s.loss for s in self.gaussian_by_b]
        return all(a >= b for a, b in zip(losses, losses[1:]))

    def accuracy_nondecreasing_in_eps(self) -> bool:
        ok = True
        for runs in (self.laplace_by_eps, self.gaussian_by_eps):
            accs = [s.acc for s in runs]
            ok &= all(a <= b for a, b in zip(accs, accs[1:]))
        return ok

    def planned_is_best(self) -> bool:
        return all(self.planned.loss < s.loss for s in self.baselines)

    def table(self) -> str:
        rows = [f"{'setting':<28}{'b':>4}{'T':>6}{'loss':>11}{'acc':>8}"]
        groups = ([self.planned], self.baselines, self.gaussian_by_b, self.laplace_by_eps, self.gaussian_by_eps)
        for group in groups:
            for s in group:
                rows.append(f"{s.label:<28}{s.b:>4}{s.T:>6}{s.loss:>11.5f}{s.acc:>8.4f}")
        return "\n".join(rows)


def base_config(repeat: int = 10, seed: int = 0) -> ExperimentConfig:
    return with_overrides(ExperimentConfig(), [f"repeat={repeat}", f"seed={seed}"])


def baseline_grid(b_star: int, T_star: int, N: int) -> list[tuple[int, int]]:
    """Five alternatives around the plan: more rounds, full participation, or both."""
    T5 = max(5 * T_star, 5)
    grid = [(5, T5), (N, T_star), (b_star, T5), (N, T5), (5, T_star)]
    out = []
    for bt in grid:
        if bt != (b_star, T_star) and bt not in out:
            out.append(bt)
    return out


def _run(cfg: ExperimentConfig, prepared, label: str, overrides: list) -> Setting:
    res = experiment.run_experiment(with_overrides(cfg, overrides), prepared=prepared, write=False)
    return Setting(label, res.b, res.T, res.final_loss_mean, res.final_acc_mean)


def run_trends(repeat: int = 10, seed: int = 0) -> TrendReport:
    cfg = base_config(repeat, seed)
    prepared = experiment.prepare_data(cfg)
    N = cfg.partition.N

    planned_res = experiment.run_experiment(cfg, prepared=prepared, write=False)
    b_star, T_star = planned_res.b, planned_res.T
    planned = Setting("laplace planned", b_star, T_star, planned_res.final_loss_mean, planned_res.final_acc_mean)
    fixed = [f"schedule.b={b_star}", f"schedule.T={T_star}"]

    report = TrendReport(b_star, T_star, planned)
    for b, T in baseline_grid(b_star, T_star, N):
        report.baselines.append(_run(cfg, prepared, "laplace baseline", [f"schedule.b={b}", f"schedule.T={T}"]))
    for b in GAUSSIAN_BS:
        report.gaussian_by_b.append(_run(cfg, prepared, f"gaussian eps={GAUSSIAN_EPSILON:g}", [
            *GAUSSIAN, f"budget.epsilon={GAUSSIAN_EPSILON}", f"schedule.b={b}", f"schedule.T={GAUSSIAN_T}",
        ]))
    for eps in EPSILONS:
        report.laplace_by_eps.append(_run(cfg, prepared, f"laplace eps={eps:g}", [*fixed, f"budget.epsilon={eps}"]))
    for eps in EPSILONS:
        report.gaussian_by_eps.append(_run(cfg, prepared, f"gaussian eps={eps:g}", [
            *GAUSSIAN, f"budget.epsilon={eps}", f"schedule.b={N}", f"schedule.T={GAUSSIAN_T}",
        ]))
    return report
