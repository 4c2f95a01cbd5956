"""Estimate the bound constants from a partitioned dataset."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model
from .bounds import BoundConstants
from .data import ClientPartition
from .mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget

LAMBDA_VARIANCE = "variance"
LAMBDA_MAX = "max"


@dataclass(frozen=True)
class ProbeConfig:
    """How to probe the objective.

    ``mu``/``lam`` default to ``l2`` and :func:`model.smoothness_constant` of
    the pooled data. ``lambda_mode`` picks the per-client spread statistic:
    the mean squared deviation of per-sample gradients from the local
    gradient (``"variance"``) or its maximum over samples (``"max"``).
    """

    l2: float
    spec: DpMechanismSpec = field(default_factory=DpMechanismSpec)
    budgets: Sequence[PrivacyBudget] = ()
    theta0: np.ndarray | None = None
    mu: float | None = None
    lam: float | None = None
    fit_gtol: float = 1e-10
    fit_max_iter: int = 20_000
    lambda_mode: str = LAMBDA_VARIANCE
    clip_probes: bool = True

    def __post_init__(self):
        if not self.l2 > 0 and self.mu is None:
            raise ValueError("a positive l2 (or an explicit mu) is needed for strong convexity")
        if self.lambda_mode not in (LAMBDA_VARIANCE, LAMBDA_MAX):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")


@dataclass
class ConstantEstimate:
    constants: BoundConstants
    local_optima: list[np.ndarray]
    local_losses: list[float]
    global_optimum: np.ndarray
    converged: list[bool]

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def fit_local_optima(partition: ClientPartition, l2: float, gtol: float = 1e-10, max_iter: int = 20_000):
    """Per-client ``(theta_i*, F_i*, converged)``."""
    out = []
    for ds in partition.client_datasets:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", model.NonConvergenceWarning)
            theta, ok = model.fit_optimum(ds, l2, gtol=gtol, max_iter=max_iter)
        out.append((theta, model.loss(theta, ds, l2), ok))
    return out


def per_sample_norms(params, partition: ClientPartition, l2: float, clip=None) -> np.ndarray:
    """L2 norms of every per-sample gradient across all clients, optionally clipped first."""
    norms = []
    for ds in partition.client_datasets:
        rows = model.per_sample_gradients(params, ds, l2)
        if clip is not None:
            rows = model.clip_rows(rows, *clip)
        norms.append(np.sqrt(np.einsum("ij,ij->i", rows, rows)))
    return np.concatenate(norms)


def client_spread(params, partition: ClientPartition, l2: float, mode: str = LAMBDA_VARIANCE) -> np.ndarray:
    """Per-client ``Lambda_i``: spread of per-sample gradients around the local gradient."""
    out = []
    for ds in partition.client_datasets:
        rows = model.per_sample_gradients(params, ds, l2)
        dev = rows - rows.mean(axis=0)
        sq = np.einsum("ij,ij->i", dev, dev)
        out.append(math.sqrt(float(sq.mean() if mode == LAMBDA_VARIANCE else sq.max())))
    return np.array(out)


def estimate_details(partition: ClientPartition, probe: ProbeConfig) -> ConstantEstimate:
    """Fit local and global optima and derive every constant.

    ``G`` is the largest per-sample gradient norm seen at the probe points
    ``theta0``, every ``theta_i*`` and the global optimum. ``Lambda_i`` is
    the largest spread over the same points.
    """
    N = partition.N
    first = partition.client_datasets[0]
    p = model.n_params(first.n_features, first.n_classes)
    theta0 = np.zeros(p) if probe.theta0 is None else np.asarray(probe.theta0, dtype=np.float64)
    w = partition.weights

    fits = fit_local_optima(partition, probe.l2, probe.fit_gtol, probe.fit_max_iter)
    optima = [f[0] for f in fits]
    losses = [f[1] for f in fits]
    converged = [f[2] for f in fits]
    pooled = partition.pooled()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", model.NonConvergenceWarning)
        theta_star, ok = model.fit_optimum(pooled, probe.l2, gtol=probe.fit_gtol, max_iter=probe.fit_max_iter)
    converged.append(ok)
    bad = [i for i, c in enumerate(converged[:-1]) if not c]
    if bad or not ok:
        where = ", ".join(f"client {i}" for i in bad) + (" global" if not ok else "")
        warnings.warn(f"optimum fit did not converge for: {where.strip(', ')}", model.NonConvergenceWarning, stacklevel=2)

    Y0 = float(sum(wi * np.sum((theta0 - th) ** 2) for wi, th in zip(w, optima)))
    Gamma = max(0.0, float(max(losses) - np.dot(w, losses)))

    clip = probe.spec.clip if probe.clip_probes else None
    probes = [theta0, theta_star, *optima]
    G = max(float(per_sample_norms(th, partition, probe.l2, clip).max()) for th in probes)
    Lambdas = np.max([client_spread(th, partition, probe.l2, probe.lambda_mode) for th in probes], axis=0)

    mu = probe.mu if probe.mu is not None else probe.l2
    lam = probe.lam if probe.lam is not None else model.smoothness_constant(pooled, probe.l2)
    budgets = list(probe.budgets) or [PrivacyBudget(1.0, 1e-5 if probe.spec.kind is Mechanism.GAUSSIAN else 0.0)] * N
    if len(budgets) != N:
        raise ValueError(f"expected {N} budgets, got {len(budgets)}")
    consts = BoundConstants(
        mu=mu,
        lam=lam,
        G=max(G, 1e-300),
        Gamma=Gamma,
        Y0=Y0,
        p=p,
        d=float(partition.total_size),
        N=N,
        epsilons=tuple(bud.epsilon for bud in budgets),
        deltas=tuple(bud.delta for bud in budgets),
        xi1=probe.spec.xi1,
        xi2=probe.spec.xi2,
        Lambdas=tuple(float(v) for v in Lambdas),
        client_sizes=tuple(float(s) for s in partition.client_sizes),
        q=probe.spec.q,
        c2=probe.spec.c2,
    )
    return ConstantEstimate(consts, optima, losses, theta_star, converged)


def estimate_constants(partition: ClientPartition, probe: ProbeConfig) -> BoundConstants:
    return estimate_details(partition, probe).constants
