"""Laplace and Gaussian noise calibration for client-side DP.

Every client answers ``b*T/N`` of the server's ``T`` queries, so the noise
calibrated here grows with that reply count. Calibrations take equality in
the Gaussian variance condition, i.e. the smallest compliant noise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .model import L1, L2


class Mechanism(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    NONE = "none"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")


@dataclass(frozen=True)
class DpMechanismSpec:
    """Mechanism choice plus clipping bounds, batch rate ``q`` and the
    Gaussian accountant constants ``c1``, ``c2``.

    ``clip_mode`` selects where the clip is applied: ``"batch"`` clips the
    batch-mean gradient, ``"sample"`` clips each per-sample gradient before
    averaging.
    """

    kind: Mechanism = Mechanism.NONE
    xi1: float = 300.0
    xi2: float = 10.0
    q: float = 1.0
    c1: float = 10.0
    c2: float = 1.0
    clip_mode: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "kind", Mechanism(self.kind))
        if not (self.xi1 > 0 and self.xi2 > 0 and self.c1 > 0 and self.c2 > 0):
            raise ValueError("xi1, xi2, c1 and c2 must be positive")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.kind is Mechanism.LAPLACE and self.q != 1:
            raise ValueError("the Laplace mechanism uses every local sample (q = 1)")
        if self.kind is Mechanism.GAUSSIAN and not self.q < 1:
            raise ValueError("the Gaussian mechanism needs a sampling rate q < 1")
        if self.clip_mode not in ("batch", "sample"):
            raise ValueError("clip_mode must be 'batch' or 'sample'")

    @property
    def clip(self) -> tuple[float, str] | None:
        """``(bound, norm_order)`` used before noising, or None."""
        if self.kind is Mechanism.LAPLACE:
            return self.xi1, L1
        if self.kind is Mechanism.GAUSSIAN:
            return self.xi2, L2
        return None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out

    def check_budget(self, budget: PrivacyBudget) -> None:
        if self.kind is Mechanism.LAPLACE and budget.delta != 0:
            raise ValueError("the Laplace mechanism is pure DP: delta must be 0")
        if self.kind is Mechanism.GAUSSIAN and budget.delta <= 0:
            raise ValueError("the Gaussian mechanism needs delta > 0")


def _positive(**kw) -> None:
    for name, val in kw.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val!r}")


def laplace_scale(budget: PrivacyBudget, xi1: float, b: float, T: float, N: int, d_i: float) -> float:
    """Per-coordinate Laplace scale ``2 b T xi1 / (N d_i eps)``."""
    _positive(xi1=xi1, b=b, T=T, N=N, d_i=d_i)
    if b > N:
        raise ValueError("b cannot exceed N")
    return 2.0 * b * T * xi1 / (N * d_i * budget.epsilon)


def gaussian_sigma(
    budget: PrivacyBudget, xi2: float, b: float, T: float, N: int, d_i: float, c2: float
) -> float:
    """Smallest compliant std: ``sigma^2 = c2^2 xi2^2 / (d_i^2 eps^2) * (b T / N) * log(1/delta)``."""
    if budget.delta <= 0:
        raise ValueError("the Gaussian mechanism is undefined for delta = 0")
    _positive(xi2=xi2, b=b, T=T, N=N, d_i=d_i, c2=c2)
    if b > N:
        raise ValueError("b cannot exceed N")
    var = (c2 * xi2 / (d_i * budget.epsilon)) ** 2 * (b * T / N) * math.log(1.0 / budget.delta)
    return math.sqrt(var)


def validate_gaussian_epsilon(q: float, T: float, c1: float, epsilon: float) -> bool:
    """Whether ``epsilon`` is in the range ``epsilon < c1 q^2 T`` covered by the Gaussian guarantee."""
    return epsilon < c1 * q * q * T


def noise_scale(spec: DpMechanismSpec, budget: PrivacyBudget, b: int, T: int, N: int, d_i: int) -> float:
    """Laplace scale or Gaussian std for one client, 0 for no mechanism."""
    if spec.kind is Mechanism.NONE:
        return 0.0
    spec.check_budget(budget)
    if spec.kind is Mechanism.LAPLACE:
        return laplace_scale(budget, spec.xi1, b, T, N, d_i)
    return gaussian_sigma(budget, spec.xi2, b, T, N, d_i, spec.c2)


def sample_laplace(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF Laplace draws: ``-scale * sign(u) * log(1 - 2|u|)``, ``u ~ U[-1/2, 1/2)``."""
    u = rng.random(size) - 0.5
    # u == -0.5 maps to an infinite draw; the measure-zero endpoint is nudged inward
    u = np.maximum(u, np.nextafter(-0.5, 0.0))
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_noise(
    spec: DpMechanismSpec,
    budget: PrivacyBudget,
    schedule,
    d_i: int,
    p: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One client's noise vector ``w`` of length ``p``.

    ``schedule`` is anything exposing ``b``, ``T`` and ``N``.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if spec.kind is Mechanism.NONE:
        return np.zeros(p)
    scale = noise_scale(spec, budget, schedule.b, schedule.T, schedule.N, d_i)
    if spec.kind is Mechanism.LAPLACE:
        return sample_laplace(scale, p, rng)
    return scale * rng.standard_normal(p)


def aggregated_noise_variance(
    spec: DpMechanismSpec,
    budgets: Sequence[PrivacyBudget],
    schedule,
    eta_t: float,
    p: int,
    d: float,
    N: int,
) -> float:
    """Analytic ``E||w_t^b||^2`` of the aggregated noise of ``b`` random clients.

    Laplace: ``8 eta^2 p b T^2 xi1^2 / (N d^2) * sum 1/eps_i^2``.
    Gaussian: ``c2^2 eta^2 p T xi2^2 / d^2 * sum log(1/delta_i) / eps_i^2`` (no ``b``).
    """
    if spec.kind is Mechanism.NONE:
        return 0.0
    if len(budgets) != N:
        raise ValueError(f"expected {N} budgets, got {len(budgets)}")
    for bud in budgets:
        spec.check_budget(bud)
    b, T = schedule.b, schedule.T
    if spec.kind is Mechanism.LAPLACE:
        inv = sum(1.0 / bud.epsilon**2 for bud in budgets)
        return 8.0 * eta_t**2 * p * b * T**2 * spec.xi1**2 / (N * d**2) * inv
    inv = sum(math.log(1.0 / bud.delta) / bud.epsilon**2 for bud in budgets)
    return spec.c2**2 * eta_t**2 * p * T * spec.xi2**2 / d**2 * inv
