"""Experiment configuration: a JSON tree with validated sections and dotted-path overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .federation import RANDOM, ROUND_ROBIN
from .mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget

AUTO = "auto"


class ConfigError(ValueError):
    """Invalid configuration. ``problems`` lists every offending field."""

    def __init__(self, problems: list[str] | str):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | idx | csv
    n_samples: int = 2000
    n_features: int = 8
    n_classes: int = 10
    class_separation: float = 3.0
    seed: int = 1
    n_test: int = 400
    scale: bool = True
    image_path: str | None = None
    label_path: str | None = None
    test_image_path: str | None = None
    test_label_path: str | None = None
    csv_path: str | None = None
    test_csv_path: str | None = None


@dataclass
class PartitionConfig:
    N: int = 10
    classes_per_client: int = 2
    seed: int = 3
    data_fraction: float = 1.0


@dataclass
class MechanismConfig:
    kind: str = "laplace"
    xi1: float = 1.0
    xi2: float = 1.0
    q: float = 1.0
    c1: float = 10.0
    c2: float = 1.0
    clip_mode: str = "batch"

    def build(self) -> DpMechanismSpec:
        return DpMechanismSpec(
            Mechanism(self.kind), self.xi1, self.xi2, self.q, self.c1, self.c2, self.clip_mode
        )


@dataclass
class BudgetConfig:
    epsilon: float | list[float] = 1.0
    delta: float | list[float] = 0.0

    def build(self, N: int) -> list[PrivacyBudget]:
        eps = self.epsilon if isinstance(self.epsilon, list) else [self.epsilon] * N
        dl = self.delta if isinstance(self.delta, list) else [self.delta] * N
        if len(eps) != N or len(dl) != N:
            raise ConfigError(f"budget lists need {N} entries")
        return [PrivacyBudget(float(e), float(d)) for e, d in zip(eps, dl)]


@dataclass
class ScheduleConfig:
    b: int | str = AUTO
    T: int | str = AUTO
    l2: float = 0.1
    mu: float | None = None
    lam: float | None = None
    selection: str = ROUND_ROBIN
    init: str = "zeros"
    T_cap: int = 10_000


@dataclass
class ConstantsConfig:
    source: str = "estimate"  # estimate | file
    path: str | None = None
    lambda_mode: str = "variance"


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    repeat: int = 10
    seed: int = 0
    output_dir: str = "runs/experiment"

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_auto(self) -> bool:
        return self.schedule.b == AUTO or self.schedule.T == AUTO

    def validate(self) -> None:
        problems = []
        ds, pt, sc = self.dataset, self.partition, self.schedule
        if ds.source not in ("synthetic", "idx", "csv"):
            problems.append(f"dataset.source: unknown source {ds.source!r}")
        if ds.source == "idx" and not (ds.image_path and ds.label_path):
            problems.append("dataset.image_path/label_path: required for idx data")
        if ds.source == "csv" and not ds.csv_path:
            problems.append("dataset.csv_path: required for csv data")
        if ds.source == "synthetic" and not 0 <= ds.n_test < ds.n_samples:
            problems.append("dataset.n_test: must lie in [0, n_samples)")
        if pt.N < 1:
            problems.append("partition.N: must be at least 1")
        if not 0 < pt.data_fraction <= 1:
            problems.append("partition.data_fraction: must lie in (0, 1]")
        try:
            spec = self.mechanism.build()
        except ValueError as exc:
            problems.append(f"mechanism: {exc}")
            spec = None
        try:
            budgets = self.budget.build(pt.N)
            if spec is not None:
                for bud in budgets:
                    spec.check_budget(bud)
        except ValueError as exc:
            problems.append(f"budget: {exc}")
        for name in ("b", "T"):
            v = getattr(sc, name)
            if v != AUTO and not (isinstance(v, int) and not isinstance(v, bool)):
                problems.append(f"schedule.{name}: must be an integer or 'auto'")
        if isinstance(sc.b, int) and not 1 <= sc.b <= pt.N:
            problems.append(f"schedule.b: must lie in [1, {pt.N}]")
        if isinstance(sc.T, int) and sc.T < 0:
            problems.append("schedule.T: must be nonnegative")
        if sc.l2 < 0:
            problems.append("schedule.l2: must be nonnegative")
        if sc.l2 == 0 and sc.mu is None:
            problems.append("schedule.mu: required when l2 = 0")
        if sc.selection not in (ROUND_ROBIN, RANDOM):
            problems.append(f"schedule.selection: unknown mode {sc.selection!r}")
        if sc.init not in ("zeros", "gaussian"):
            problems.append(f"schedule.init: unknown init {sc.init!r}")
        if sc.T_cap < 1:
            problems.append("schedule.T_cap: must be at least 1")
        if self.is_auto:
            if spec is not None and spec.kind is Mechanism.NONE:
                problems.append("schedule: 'auto' needs the laplace or gaussian mechanism")
            if self.constants.source not in ("estimate", "file"):
                problems.append("constants.source: must be 'estimate' or 'file'")
            if self.constants.source == "file" and not self.constants.path:
                problems.append("constants.path: required when constants.source = 'file'")
        if self.repeat < 1:
            problems.append("repeat: must be at least 1")
        if problems:
            raise ConfigError(problems)


_SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "mechanism": MechanismConfig,
    "budget": BudgetConfig,
    "schedule": ScheduleConfig,
    "constants": ConstantsConfig,
}


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    problems = []
    kw: dict[str, Any] = {}
    top = {f.name for f in fields(ExperimentConfig)}
    for key, val in raw.items():
        if key not in top:
            problems.append(f"{key}: unknown key")
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(val, dict):
                problems.append(f"{key}: must be an object")
                continue
            names = {f.name for f in fields(cls)}
            problems.extend(f"{key}.{k}: unknown key" for k in val if k not in names)
            kw[key] = cls(**{k: v for k, v in val.items() if k in names})
        else:
            kw[key] = val
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(raw)


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"a.b=value"`` to ``(["a", "b"], value)``; the value is JSON if it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides:
        path, value = parse_override(item) if isinstance(item, str) else item
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {'.'.join(path)} crosses a non-object")
        node[path[-1]] = value
    return out


def with_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    return from_dict(apply_overrides(cfg.to_dict(), overrides))
