"""FedSGD with client-side DP: selection, noisy local step, weighted aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model
from .data import ClientPartition, Dataset
from .mechanisms import DpMechanismSpec, PrivacyBudget, sample_noise

ROUND_ROBIN = "round_robin"
RANDOM = "random"


class FederationError(RuntimeError):
    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index} failed: {cause}")
        self.round_index = round_index
        self.cause = cause


@dataclass(frozen=True)
class FederationSchedule:
    """Participation, horizon and learning-rate constants for one run.

    ``mu``/``lam`` are the strong-convexity and smoothness constants that
    set ``eta_t = (2/mu) / (t + 2 lam/mu)``; ``l2`` is the ridge weight of
    the local objective.
    """

    N: int
    b: int
    T: int
    mu: float
    lam: float
    l2: float = 0.0
    base_seed: int = 0
    selection: str = ROUND_ROBIN
    init: str = "zeros"
    init_scale: float = 0.01

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 1 <= self.b <= self.N:
            raise ValueError(f"b must lie in [1, N={self.N}], got {self.b}")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if not (self.mu > 0 and self.lam > 0):
            raise ValueError("mu and lam must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if self.selection not in (ROUND_ROBIN, RANDOM):
            raise ValueError(f"unknown selection mode {self.selection!r}")
        if self.init not in ("zeros", "gaussian"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def gamma(self) -> float:
        return 2.0 * self.lam / self.mu

    def eta(self, t: int) -> float:
        return learning_rate(t, self.mu, self.lam)


def learning_rate(t: int, mu: float, lam: float) -> float:
    """``eta_t = (2/mu) / (t + gamma)`` with ``gamma = 2 lam / mu``; ``eta_0 = 1/lam``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return (2.0 / mu) / (t + 2.0 * lam / mu)


def select_clients_round_robin(round_t: int, N: int, b: int) -> list[int]:
    """Clients ``(t*b) mod N, ..., (t*b + b - 1) mod N``."""
    if not 1 <= b <= N:
        raise ValueError("need 1 <= b <= N")
    start = round_t * b
    return [(start + k) % N for k in range(b)]


def select_clients_random(rng: np.random.Generator, N: int, b: int) -> list[int]:
    """Uniform b-subset without replacement, sorted by id."""
    if not 1 <= b <= N:
        raise ValueError("need 1 <= b <= N")
    return sorted(int(i) for i in rng.choice(N, size=b, replace=False))


def local_batch(client_dataset: Dataset, q: float, rng: np.random.Generator) -> Dataset:
    """``ceil(q * d_i)`` samples without replacement; the whole set when that is ``d_i``."""
    d_i = len(client_dataset)
    m = math.ceil(q * d_i)
    if m < 1:
        raise ValueError("empty batch")
    if m >= d_i:
        return client_dataset
    idx = np.sort(rng.choice(d_i, size=m, replace=False))
    return client_dataset.subset(idx)


def clipped_gradient(params, batch: Dataset, spec: DpMechanismSpec, l2: float) -> np.ndarray:
    clip = spec.clip
    if clip is None:
        return model.gradient(params, batch, l2)
    bound, order = clip
    if spec.clip_mode == "sample":
        rows = model.clip_rows(model.per_sample_gradients(params, batch, l2), bound, order)
        return rows.mean(axis=0)
    return model.clip_gradient(model.gradient(params, batch, l2), bound, order)


def client_update(
    global_params,
    client_dataset: Dataset,
    spec: DpMechanismSpec,
    budget: PrivacyBudget,
    schedule: FederationSchedule,
    t: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One noisy local step: ``theta - eta_t * (clip(g) + w)``."""
    theta = np.asarray(global_params, dtype=np.float64)
    batch = local_batch(client_dataset, spec.q, rng)
    g = clipped_gradient(theta, batch, spec, schedule.l2)
    w = sample_noise(spec, budget, schedule, len(client_dataset), theta.size, rng)
    return theta - schedule.eta(t) * (g + w)


def aggregate(
    replies: Sequence[tuple[int, np.ndarray]],
    client_sizes: Sequence[int],
    N: int,
    b: int,
) -> np.ndarray:
    """``(N/b) * sum_i (d_i/d) theta_i`` over replies, reduced in client-id order."""
    if len(replies) != b:
        raise ValueError(f"expected {b} replies, got {len(replies)}")
    ids = [cid for cid, _ in replies]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids in replies")
    d = float(sum(client_sizes))
    acc = None
    for cid, params in sorted(replies, key=lambda r: r[0]):
        term = (client_sizes[cid] / d) * np.asarray(params, dtype=np.float64)
        acc = term if acc is None else acc + term
    return (N / b) * acc


@dataclass
class RoundRecord:
    t: int
    selected: tuple[int, ...]
    train_loss: float
    test_acc: float
    eta_t: float
    dist_sq_opt: float


@dataclass
class TrainingTrace:
    records: list[RoundRecord] = field(default_factory=list)
    initial_params: np.ndarray | None = None
    final_params: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "selected_ids", "train_loss", "test_acc", "eta_t", "dist_sq_opt"])
            for r in self.records:
                w.writerow(
                    [r.t, " ".join(map(str, r.selected)), repr(r.train_loss),
                     repr(r.test_acc), repr(r.eta_t), repr(r.dist_sq_opt)]
                )


def client_streams(base_seed: int, N: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """A server stream plus one independent stream per client id."""
    root = np.random.SeedSequence(base_seed)
    server, *clients = root.spawn(N + 1)
    return np.random.default_rng(server), [np.random.default_rng(s) for s in clients]


def initial_params(partition: ClientPartition, schedule: FederationSchedule, rng) -> np.ndarray:
    first = partition.client_datasets[0]
    p = model.n_params(first.n_features, first.n_classes)
    if schedule.init == "zeros":
        return np.zeros(p)
    return schedule.init_scale * rng.standard_normal(p)


def run_federation(
    partition: ClientPartition,
    spec: DpMechanismSpec,
    budgets: Sequence[PrivacyBudget],
    schedule: FederationSchedule,
    reference_optimum: np.ndarray | None = None,
    test_data: Dataset | None = None,
    train_data: Dataset | None = None,
) -> TrainingTrace:
    """Run ``T`` rounds and record one :class:`RoundRecord` per round.

    ``train_loss`` is the regularized loss of the new global parameters on
    the pooled client data (or ``train_data`` if given); ``test_acc`` is NaN
    without a test set.
    """
    if partition.N != schedule.N:
        raise ValueError(f"partition has {partition.N} clients, schedule expects {schedule.N}")
    if len(budgets) != schedule.N:
        raise ValueError("one budget per client is required")
    for bud in budgets:
        spec.check_budget(bud)
    server_rng, rngs = client_streams(schedule.base_seed, schedule.N)
    theta = initial_params(partition, schedule, server_rng)
    trace = TrainingTrace(initial_params=theta.copy())
    pooled = train_data if train_data is not None else partition.pooled()
    sizes = partition.client_sizes

    for t in range(schedule.T):
        try:
            if schedule.selection == ROUND_ROBIN:
                selected = select_clients_round_robin(t, schedule.N, schedule.b)
            else:
                selected = select_clients_random(server_rng, schedule.N, schedule.b)
            replies = [
                (i, client_update(theta, partition.client_datasets[i], spec, budgets[i], schedule, t, rngs[i]))
                for i in selected
            ]
            theta = aggregate(replies, sizes, schedule.N, schedule.b)
            if not np.all(np.isfinite(theta)):
                raise FloatingPointError("non-finite global parameters")
        except Exception as exc:  # noqa: BLE001 - re-raised with the round index
            raise FederationError(t, exc) from exc
        trace.records.append(
            RoundRecord(
                t=t,
                selected=tuple(selected),
                train_loss=model.loss(theta, pooled, schedule.l2),
                test_acc=model.accuracy(theta, test_data) if test_data is not None else math.nan,
                eta_t=schedule.eta(t),
                dist_sq_opt=(
                    float(np.sum((theta - reference_optimum) ** 2))
                    if reference_optimum is not None
                    else math.nan
                ),
            )
        )
    trace.final_params = theta
    return trace


def reference_optimum(partition: ClientPartition, l2: float) -> np.ndarray:
    """Global optimum of the weighted objective, i.e. of the pooled loss."""
    theta, _ = model.fit_optimum(partition.pooled(), l2)
    return theta
