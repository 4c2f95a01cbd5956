"""Brute-force and Monte-Carlo oracles for the analytic results.

Client subsets are drawn uniformly without replacement here, which is the
sampling model the unbiasedness and variance results are stated for.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import model
from .bounds import BoundConstants, bound_for
from .data import ClientPartition
from .mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget, noise_scale, sample_laplace

_CHUNK = 1 << 21  # random draws per vectorized block


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    trials: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr

    @classmethod
    def from_samples(cls, x: np.ndarray) -> McEstimate:
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        if n < 100:
            raise ValueError("an McEstimate needs at least 100 trials")
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)), n)


def random_subsets(rng: np.random.Generator, trials: int, N: int, b: int) -> np.ndarray:
    """``(trials, N)`` 0/1 matrix, each row a uniform ``b``-subset."""
    ranks = np.argsort(rng.random((trials, N)), axis=1)
    mask = np.zeros((trials, N))
    np.put_along_axis(mask, ranks[:, :b], 1.0, axis=1)
    return mask


def mc_noise_variance(
    spec: DpMechanismSpec,
    budgets: Sequence[PrivacyBudget],
    schedule,
    eta_t: float,
    trials: int,
    seed: int,
    p: int,
    client_sizes: Sequence[int],
) -> McEstimate:
    """Simulate ``E||w_t^b||^2`` with ``w_t^b = (N/b) sum_{i in P} (d_i/d) eta w_i``.

    ``schedule`` exposes ``N``, ``b`` and ``T``; noise is drawn with the
    per-client calibration, so only the aggregation step is re-derived.
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    N, b = schedule.N, schedule.b
    if spec.kind is Mechanism.NONE:
        return McEstimate(0.0, 0.0, trials)
    sizes = np.asarray(client_sizes, dtype=np.float64)
    d = sizes.sum()
    scales = np.array([noise_scale(spec, budgets[i], b, schedule.T, N, sizes[i]) for i in range(N)])
    coef = (N / b) * (sizes / d) * eta_t * scales  # noise = coef_i * unit draw
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    block = max(1, _CHUNK // (N * p))
    for start in range(0, trials, block):
        n = min(block, trials - start)
        mask = random_subsets(rng, n, N, b)
        if spec.kind is Mechanism.LAPLACE:
            unit = sample_laplace(1.0, (n, N, p), rng)
        else:
            unit = rng.standard_normal((n, N, p))
        w = np.einsum("tn,tnp->tp", mask * coef, unit)
        out[start:start + n] = np.einsum("tp,tp->t", w, w)
    return McEstimate.from_samples(out)


def mc_sampling_bias(
    values_per_client,
    weights: Sequence[float],
    N: int,
    b: int,
    trials: int,
    seed: int,
) -> McEstimate:
    """Norm of (empirical mean of ``(N/b) sum_{i in P} w_i v_i``) minus ``sum_i w_i v_i``.

    ``stderr`` is the root-sum-square of the per-coordinate standard errors
    of that empirical mean.
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    v = np.asarray(values_per_client, dtype=np.float64).reshape(N, -1)
    w = np.asarray(weights, dtype=np.float64)
    full = _weighted_sum(np.ones(N), w, v, 1.0)
    rng = np.random.default_rng(seed)
    mask = random_subsets(rng, trials, N, b)
    devs = _weighted_sum(mask, w, v, N / b) - full
    mean = devs.mean(axis=0)
    se = devs.std(axis=0, ddof=1) / math.sqrt(trials)
    return McEstimate(float(np.linalg.norm(mean)), float(np.linalg.norm(se)), trials)


def _weighted_sum(mask, w, v, factor):
    """``factor * sum_i mask_i w_i v_i`` with ``mask`` of shape ``(N,)`` or ``(trials, N)``.

    Clients are accumulated in a fixed order, so an all-ones mask with
    ``factor = 1`` reproduces the full weighted sum bit for bit.
    """
    mask = np.asarray(mask, dtype=np.float64)
    acc = np.zeros(mask.shape[:-1] + (v.shape[1],))
    for i in range(len(w)):
        acc = acc + mask[..., i, None] * w[i] * v[i]
    return factor * acc


def exhaustive_sampling_bias(values_per_client, weights, b: int) -> list[Fraction]:
    """Exact mean over all ``C(N, b)`` subsets minus the full weighted sum, in rationals."""
    v = [[Fraction(x) for x in np.atleast_1d(row)] for row in values_per_client]
    w = [Fraction(x) for x in weights]
    N = len(w)
    dim = len(v[0])
    subsets = list(itertools.combinations(range(N), b))
    total = [Fraction(0)] * dim
    for sub in subsets:
        for i in sub:
            for k in range(dim):
                total[k] += Fraction(N, b) * w[i] * v[i][k]
    full = [sum(w[i] * v[i][k] for i in range(N)) for k in range(dim)]
    return [total[k] / len(subsets) - full[k] for k in range(dim)]


def client_gradients(partition: ClientPartition, params, l2: float = 0.0) -> np.ndarray:
    """``(N, p)`` full local gradients."""
    return np.stack([model.gradient(params, ds, l2) for ds in partition.client_datasets])


def mc_gradient_variance(
    partition: ClientPartition,
    params,
    b: int,
    q: float,
    trials: int,
    seed: int,
    l2: float = 0.0,
) -> McEstimate:
    """Simulate ``E||g^{b,q} - g||^2`` at fixed ``params``.

    ``g^{b,q} = (N/b) sum_{i in P} (d_i/d) grad F_i(theta, B_i)`` with ``B_i``
    a batch of ``ceil(q d_i)`` local samples drawn without replacement.
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    N = partition.N
    w = partition.weights
    full = client_gradients(partition, params, l2)
    g = _weighted_sum(np.ones(N), w, full, 1.0)
    rng = np.random.default_rng(seed)

    batch_grads = []  # per client: (trials, p)
    for i, ds in enumerate(partition.client_datasets):
        d_i = len(ds)
        m = math.ceil(q * d_i)
        if m >= d_i:
            batch_grads.append(np.broadcast_to(full[i], (trials, full.shape[1])))
            continue
        per = model.per_sample_gradients(params, ds, l2)
        idx = np.argsort(rng.random((trials, d_i)), axis=1)[:, :m]
        batch_grads.append(per[idx].mean(axis=1))
    mask = random_subsets(rng, trials, N, b)

    acc = np.zeros((trials, full.shape[1]))
    for i in range(N):
        acc = acc + mask[:, i:i + 1] * w[i] * batch_grads[i]
    diff = (N / b) * acc - g
    return McEstimate.from_samples(np.einsum("tp,tp->t", diff, diff))


def selection_variance_bound(N: int, b: int, G: float) -> float:
    """``2 (N-b) G^2 / ((N-1) b)``; zero for a single client."""
    if N == 1:
        return 0.0
    return 2.0 * (N - b) / (N - 1) * G**2 / b


def subsampled_variance_bound(N: int, b: int, G: float, client_sizes, Lambdas, q: float) -> float:
    sizes = np.asarray(client_sizes, dtype=np.float64)
    d = sizes.sum()
    return selection_variance_bound(N, b, G) + float(np.sum(sizes * np.asarray(Lambdas) ** 2) / (q * d**2))


@dataclass(frozen=True)
class GridResult:
    T: int
    b: int
    value: float


def grid_minimize_bound(
    mechanism,
    consts: BoundConstants,
    T_max: int,
    step: int = 1,
    b: int | None = None,
    T: int | None = None,
) -> GridResult:
    """Exhaustive minimum over ``T in {0, step, ..., T_max}`` and ``b in {1..N}``.

    Fixing ``b`` or ``T`` reduces it to a one-dimensional search. Ties go to
    the smallest ``T`` and then the smallest ``b``.
    """
    if T_max < 1 and T is None:
        raise ValueError("T_max must be at least 1")
    bound = bound_for(mechanism)
    Ts = np.array([T], dtype=np.float64) if T is not None else np.arange(0, T_max + 1, step, dtype=np.float64)
    bs = np.array([b], dtype=np.float64) if b is not None else np.arange(1, consts.N + 1, dtype=np.float64)
    vals = bound(Ts[:, None], bs[None, :], consts)
    k = int(np.argmin(vals))
    i, j = divmod(k, len(bs))
    return GridResult(int(Ts[i]), int(bs[j]), float(vals[i, j]))
