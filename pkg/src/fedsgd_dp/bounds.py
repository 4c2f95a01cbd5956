"""Convergence-rate upper bounds ``U(T, b)`` and their minimizers.

Laplace bound (per-coordinate Laplace noise, full local batches)::

    U(T, b) = (4 w0 / mu^2 + gamma Y0) / (T + gamma) + w1 / (mu^2 (T + gamma))
    w0 = 2 (N - b) G^2 / ((N - 1) b) + 2 lam Gamma
    w1 = 32 p b T^2 xi1^2 / (N d^2) * sum 1/eps_i^2

which rearranges to ``(C1/b + C2 b T^2 + C3) / (T + gamma)``.

Gaussian bound (batch rate q)::

    U(T, b) = E1 / (b (T + gamma)) + E2 / (T + gamma) + E3

The Laplace surface is strictly biconvex on ``T >= 0, 1 <= b <= N``; its
continuous minimizer sits on ``b = 1``, ``b = N`` or ``T = 0``. The Gaussian
surface is minimized at ``b = N`` and at one end of the ``T`` range.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .mechanisms import Mechanism

USELESS_WARNING = "learning is useless at this budget"


@dataclass(frozen=True)
class BoundConstants:
    """Every problem constant the two bounds depend on.

    ``epsilons``/``deltas``/``Lambdas``/``client_sizes`` are per client.
    ``G`` is the stochastic-gradient norm bound (its square enters the
    bounds), ``Gamma`` the non-iid degree and ``Y0`` the initial squared
    distance to the optimum.
    """

    mu: float
    lam: float
    G: float
    Gamma: float
    Y0: float
    p: int
    d: float
    N: int
    epsilons: tuple[float, ...]
    deltas: tuple[float, ...] = ()
    xi1: float = 300.0
    xi2: float = 10.0
    Lambdas: tuple[float, ...] = ()
    client_sizes: tuple[float, ...] = ()
    q: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        for name in ("epsilons", "deltas", "Lambdas", "client_sizes"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.deltas:
            object.__setattr__(self, "deltas", (0.0,) * self.N)
        if not self.Lambdas:
            object.__setattr__(self, "Lambdas", (0.0,) * self.N)
        if not self.client_sizes:
            object.__setattr__(self, "client_sizes", (self.d / self.N,) * self.N)
        for name in ("epsilons", "deltas", "Lambdas", "client_sizes"):
            if len(getattr(self, name)) != self.N:
                raise ValueError(f"{name} needs one entry per client ({self.N})")
        if not all(v > 0 for v in (self.mu, self.lam, self.G, self.p, self.d, self.N, self.xi1, self.xi2, self.c2)):
            raise ValueError("mu, lam, G, p, d, N, xi1, xi2 and c2 must be positive")
        if self.Gamma < 0 or self.Y0 < 0:
            raise ValueError("Gamma and Y0 must be nonnegative")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if not all(e > 0 for e in self.epsilons):
            raise ValueError("every epsilon must be positive")
        if not all(0 <= dl < 1 for dl in self.deltas):
            raise ValueError("every delta must lie in [0, 1)")
        if any(v < 0 for v in self.Lambdas):
            raise ValueError("Lambdas must be nonnegative")

    @property
    def gamma(self) -> float:
        return 2.0 * self.lam / self.mu

    @property
    def inv_eps_sq(self) -> float:
        return sum(1.0 / e**2 for e in self.epsilons)

    @property
    def gaussian_noise_sum(self) -> float:
        """``sum log(1/delta_i) / eps_i^2``."""
        if any(dl <= 0 for dl in self.deltas):
            raise ValueError("the Gaussian bound needs every delta > 0")
        return sum(math.log(1.0 / dl) / e**2 for e, dl in zip(self.epsilons, self.deltas))

    @property
    def sampling_variance(self) -> float:
        """``sum d_i Lambda_i^2 / (q d^2)``."""
        return sum(di * L**2 for di, L in zip(self.client_sizes, self.Lambdas)) / (self.q * self.d**2)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("epsilons", "deltas", "Lambdas", "client_sizes"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> BoundConstants:
        raw = dict(raw)
        N = int(raw["N"])
        for k in ("epsilons", "deltas"):
            v = raw.get(k)
            if isinstance(v, (int, float)):
                raw[k] = [float(v)] * N
        return cls(**{k: raw[k] for k in raw if k in cls.__dataclass_fields__})

    @classmethod
    def load(cls, path) -> BoundConstants:
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw.get("constants", raw))

    def with_(self, **kw) -> BoundConstants:
        return replace(self, **kw)


def _check_b(b, N: int) -> None:
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 1) or np.any(b > N):
        raise ValueError(f"b must lie in [1, {N}]")


def _sampling_factor(b, N: int):
    """``(N - b) / ((N - 1) b)``, taken as 0 when ``N = 1``."""
    if N == 1:
        return np.zeros_like(np.asarray(b, dtype=np.float64))
    return (N - b) / ((N - 1) * b)


# ---------------------------------------------------------------- Laplace


def bound_laplace(T, b, consts: BoundConstants):
    """Laplace bound in its ``w0``/``w1`` form. Broadcasts over array arguments."""
    c = consts
    _check_b(b, c.N)
    T = np.asarray(T, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w0 = 2.0 * _sampling_factor(b, c.N) * c.G**2 + 2.0 * c.lam * c.Gamma
    w1 = 32.0 * c.p * b * T**2 * c.xi1**2 / (c.N * c.d**2) * c.inv_eps_sq
    s = T + c.gamma
    out = (4.0 * w0 / c.mu**2 + c.gamma * c.Y0) / s + w1 / (c.mu**2 * s)
    return float(out) if out.ndim == 0 else out


def laplace_coefficients(consts: BoundConstants) -> tuple[float, float, float]:
    """``(C1, C2, C3)`` of ``U = (C1/b + C2 b T^2 + C3) / (T + gamma)``; needs ``N >= 2``."""
    c = consts
    if c.N < 2:
        raise ValueError("the C-form needs N >= 2")
    k = 4.0 / c.mu**2
    C1 = k * 2.0 * c.N * c.G**2 / (c.N - 1)
    C2 = 32.0 * c.p * c.xi1**2 / (c.mu**2 * c.N * c.d**2) * c.inv_eps_sq
    C3 = c.gamma * c.Y0 + k * (2.0 * c.lam * c.Gamma - 2.0 * c.G**2 / (c.N - 1))
    return C1, C2, C3


def bound_laplace_cform(T, b, consts: BoundConstants):
    C1, C2, C3 = laplace_coefficients(consts)
    _check_b(b, consts.N)
    T = np.asarray(T, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = (C1 / b + C2 * b * T**2 + C3) / (T + consts.gamma)
    return float(out) if out.ndim == 0 else out


def stationary_T(gamma: float, numerator: float, curvature: float) -> float:
    """Root of ``d/dT [(numerator + curvature T^2) / (T + gamma)] = 0``.

    ``sqrt(gamma^2 + numerator / curvature) - gamma``, floored at 0. A
    negative radicand (the stationary point leaves ``T >= 0``) maps to 0;
    zero curvature means the bound keeps decreasing, returned as ``inf``.
    """
    if curvature == 0:
        return math.inf if numerator > 0 else 0.0
    rad = gamma**2 + numerator / curvature
    if rad < 0:
        return 0.0
    return max(0.0, math.sqrt(rad) - gamma)


def laplace_T_terms(consts: BoundConstants, b: float) -> tuple[float, float]:
    """``(A1 + gamma Y0, A2)`` for the fixed-``b`` Laplace bound."""
    c = consts
    A1 = 4.0 / c.mu**2 * (2.0 * float(_sampling_factor(b, c.N)) * c.G**2 + 2.0 * c.lam * c.Gamma)
    A2 = 32.0 / c.mu**2 * c.p * b * c.xi1**2 / (c.N * c.d**2) * c.inv_eps_sq
    return A1 + c.gamma * c.Y0, A2


def optimal_T_fixed_b_laplace(consts: BoundConstants, b: float) -> float:
    """Continuous minimizer of the Laplace bound over ``T >= 0`` at fixed ``b``."""
    _check_b(b, consts.N)
    num, A2 = laplace_T_terms(consts, b)
    return stationary_T(consts.gamma, num, A2)


def optimal_b_fixed_T_laplace(consts: BoundConstants, T: float) -> float:
    """``b* = G N d / (2 T xi1 sqrt(p (N-1) sum 1/eps^2))`` clamped to ``[1, N]``.

    Returns 1 for a single client and ``N`` for ``T = 0``, where the bound
    decreases in ``b``.
    """
    c = consts
    if c.N == 1:
        return 1.0
    if T <= 0:
        return float(c.N)
    b = c.G * c.N * c.d / (2.0 * T * c.xi1) / math.sqrt(c.p * (c.N - 1)) / math.sqrt(c.inv_eps_sq)
    return float(min(max(b, 1.0), c.N))


# ---------------------------------------------------------------- Gaussian


def gaussian_coefficients(consts: BoundConstants) -> tuple[float, float, float]:
    """``(E1, E2, E3)`` of the Gaussian bound; needs ``N >= 2``."""
    c = consts
    if c.N < 2:
        raise ValueError("the E-form needs N >= 2")
    k = 4.0 / c.mu**2
    E3 = k * c.c2**2 * c.p * c.xi2**2 / c.d**2 * c.gaussian_noise_sum
    E1 = 8.0 * c.G**2 / c.mu**2 * c.N / (c.N - 1)
    E2 = k * (-2.0 * c.G**2 / (c.N - 1) + c.sampling_variance + 2.0 * c.lam * c.Gamma) + c.gamma * c.Y0 - c.gamma * E3
    return E1, E2, E3


def bound_gaussian(T, b, consts: BoundConstants):
    """Gaussian bound in the ``E1/(b(T+gamma)) + E2/(T+gamma) + E3`` form."""
    _check_b(b, consts.N)
    T = np.asarray(T, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if consts.N == 1:
        out = bound_gaussian_omega(T, b, consts)
    else:
        E1, E2, E3 = gaussian_coefficients(consts)
        s = T + consts.gamma
        out = E1 / (b * s) + E2 / s + E3
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def bound_gaussian_omega(T, b, consts: BoundConstants):
    """Gaussian bound in the ``w0'``/``w1'`` form."""
    c = consts
    _check_b(b, c.N)
    T = np.asarray(T, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w0 = 2.0 * _sampling_factor(b, c.N) * c.G**2 + c.sampling_variance + 2.0 * c.lam * c.Gamma
    w1 = 4.0 * c.c2**2 * c.p * T * c.xi2**2 / c.d**2 * c.gaussian_noise_sum
    s = T + c.gamma
    out = (4.0 * w0 / c.mu**2 + c.gamma * c.Y0) / s + w1 / (c.mu**2 * s)
    return float(out) if out.ndim == 0 else out


def gaussian_limit(consts: BoundConstants) -> float:
    """``lim_{T -> inf} U(T, b)``, the same for every ``b``."""
    c = consts
    return 4.0 / c.mu**2 * c.c2**2 * c.p * c.xi2**2 / c.d**2 * c.gaussian_noise_sum


def bound_for(mechanism) -> Callable:
    mechanism = Mechanism(mechanism)
    if mechanism is Mechanism.LAPLACE:
        return bound_laplace
    if mechanism is Mechanism.GAUSSIAN:
        return bound_gaussian
    raise ValueError("bounds exist only for the Laplace and Gaussian mechanisms")


# ---------------------------------------------------------------- candidates


@dataclass
class CandidateSolution:
    T: int
    b: int
    bound_value: float
    provenance: str
    continuous_T: float = math.nan
    continuous_b: float = math.nan
    capped: bool = False
    limit_value: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("continuous_T", "continuous_b"):
            if not math.isfinite(out[k]):
                out[k] = None if math.isnan(out[k]) else "inf"
        return out


def integerize(
    bound: Callable,
    consts: BoundConstants,
    T: float,
    b: float,
    T_max: float | None = None,
) -> tuple[int, int, float]:
    """Best of the floor/ceil neighbours of ``(T, b)`` inside the box."""
    hi = math.inf if T_max is None else T_max
    T = min(max(T, 0.0), hi)
    b = min(max(b, 1.0), consts.N)
    Ts = {math.floor(T), math.ceil(T)} if math.isfinite(T) else {int(hi)}
    bs = {math.floor(b), math.ceil(b)}
    best = None
    for Ti in sorted(Ts):
        Ti = int(min(max(Ti, 0), hi))
        for bi in sorted(bs):
            val = bound(Ti, bi, consts)
            if best is None or val < best[2]:
                best = (Ti, int(bi), float(val))
    return best


def _candidate(bound, consts, T, b, provenance, T_max=None, **kw) -> CandidateSolution:
    Ti, bi, val = integerize(bound, consts, T, b, T_max)
    return CandidateSolution(Ti, bi, val, provenance, continuous_T=float(T), continuous_b=float(b), **kw)


@dataclass
class KktResult:
    candidates: list[CandidateSolution]
    best: CandidateSolution


def kkt_solutions_laplace(consts: BoundConstants, T_max: float | None = None) -> KktResult:
    """Enumerate the three KKT solution families and pick the smallest bound.

    Solutions 1 and 2 put ``b`` on the boundary (1 or N) with the stationary
    ``T``; Solution 3 stops before the first round (``T = 0``) with the ``b``
    minimizing ``U(0, b)``.
    """
    c = consts
    cands = []
    for prov, b in (("KKT-sol1", 1), ("KKT-sol2", c.N)):
        T = optimal_T_fixed_b_laplace(c, b)
        cands.append(_candidate(bound_laplace, c, T, b, prov, T_max))
    b_grid = np.arange(1, c.N + 1)
    u0 = bound_laplace(np.zeros(c.N), b_grid, c)
    b0 = int(b_grid[int(np.argmin(u0))])
    cands.append(CandidateSolution(0, b0, float(u0[b0 - 1]), "KKT-sol3", 0.0, float(b0)))
    best = min(cands, key=lambda s: (s.bound_value, s.T, s.b))
    if best.T == 0:
        best.note = USELESS_WARNING
    return KktResult(cands, best)


def optimal_gaussian(consts: BoundConstants, T_cap: int = 10_000) -> CandidateSolution:
    """Compare running to the horizon cap with ``b = N`` against stopping at ``T = 0``."""
    if T_cap < 1:
        raise ValueError("T_cap must be at least 1")
    c = consts
    run = bound_gaussian(T_cap, c.N, c)
    b_grid = np.arange(1, c.N + 1)
    u0 = bound_gaussian(np.zeros(c.N), b_grid, c)
    b0 = int(b_grid[int(np.argmin(u0))])
    if run <= u0[b0 - 1]:
        return CandidateSolution(
            int(T_cap), c.N, float(run), "Gaussian-sol1", math.inf, float(c.N),
            capped=True, limit_value=gaussian_limit(c),
        )
    return CandidateSolution(0, b0, float(u0[b0 - 1]), "Gaussian-sol2", 0.0, float(b0), note=USELESS_WARNING)


# ---------------------------------------------------------------- ACS


@dataclass
class AcsResult:
    solution: CandidateSolution
    history: list[tuple[float, float, float]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _argmin_T(mechanism: Mechanism, consts: BoundConstants, b: float, T_cap: float) -> float:
    if mechanism is Mechanism.LAPLACE:
        T = optimal_T_fixed_b_laplace(consts, b)
    else:
        E1, E2, _ = gaussian_coefficients(consts)
        # U(T) = (E1/b + E2)/(T + gamma) + E3 is monotone in T
        T = math.inf if E1 / b + E2 > 0 else 0.0
    return min(T, T_cap)


def _argmin_b(mechanism: Mechanism, consts: BoundConstants, T: float) -> float:
    if mechanism is Mechanism.LAPLACE:
        return optimal_b_fixed_T_laplace(consts, T)
    # E1 > 0, so the Gaussian bound always decreases in b
    return float(consts.N)


def acs_minimize(
    mechanism,
    consts: BoundConstants,
    T_cap: float,
    tol: float = 1e-12,
    max_iters: int = 200,
    start: tuple[float, float] | None = None,
) -> AcsResult:
    """Alternate Convex Search over the continuous box, then integerize.

    Each sweep minimizes exactly over ``T`` with ``b`` fixed and then over
    ``b`` with ``T`` fixed, so the recorded bound never increases. Stops once
    a sweep improves the bound by less than ``tol`` (relative).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    mech = Mechanism(mechanism)
    bound = bound_for(mech)
    T, b = start if start is not None else (T_cap / 2.0, max(consts.N / 2.0, 1.0))
    val = bound(T, b, consts)
    history = [(float(T), float(b), float(val))]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        T = _argmin_T(mech, consts, b, T_cap)
        b = _argmin_b(mech, consts, T)
        new = bound(T, b, consts)
        history.append((float(T), float(b), float(new)))
        if val - new <= tol * max(abs(val), 1e-300):
            converged = True
            val = new
            break
        val = new
    sol = _candidate(bound, consts, T, b, "ACS", T_cap)
    return AcsResult(sol, history, converged, it)


def partial_optimality_gap(mechanism, consts: BoundConstants, T: float, b: float, T_cap: float) -> float:
    """Largest relative bound gain from re-optimizing one coordinate at ``(T, b)``."""
    mech = Mechanism(mechanism)
    bound = bound_for(mech)
    here = bound(T, b, consts)
    alt_T = bound(_argmin_T(mech, consts, b, T_cap), b, consts)
    alt_b = bound(T, _argmin_b(mech, consts, T), consts)
    return max(here - alt_T, here - alt_b, 0.0) / max(abs(here), 1e-300)


# ---------------------------------------------------------------- plans


@dataclass
class Plan:
    mechanism: str
    candidates: list[CandidateSolution]
    selected: CandidateSolution
    constants: BoundConstants
    T_cap: int
    warnings: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.selected.T

    @property
    def b(self) -> int:
        return self.selected.b

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "selected": self.selected.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
            "T_cap": self.T_cap,
            "warnings": list(self.warnings),
            "constants": self.constants.to_dict(),
        }

    def table(self) -> str:
        lines = [f"{'provenance':<16}{'T':>8}{'b':>5}{'bound':>16}  note"]
        for c in self.candidates:
            mark = " *" if c is self.selected else ""
            lines.append(f"{c.provenance:<16}{c.T:>8}{c.b:>5}{c.bound_value:>16.6g}  {c.note}{mark}")
        lines.append(f"selected: T*={self.T} b*={self.b} ({self.selected.provenance})")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def make_plan(mechanism, consts: BoundConstants, T_cap: int = 10_000) -> Plan:
    """Every candidate for one mechanism plus the selected ``(T*, b*)``."""
    mech = Mechanism(mechanism)
    if mech is Mechanism.LAPLACE:
        kkt = kkt_solutions_laplace(consts, T_max=T_cap)
        cands = list(kkt.candidates)
        best = kkt.best
        acs = acs_minimize(mech, consts, T_cap)
        cands.append(acs.solution)
        Tb = optimal_T_fixed_b_laplace(consts, best.b)
        cands.append(_candidate(bound_laplace, consts, Tb, best.b, "closed-form-T", T_cap))
        if best.T > 0:
            bT = optimal_b_fixed_T_laplace(consts, best.T)
            cands.append(_candidate(bound_laplace, consts, best.T, bT, "closed-form-b", T_cap))
    elif mech is Mechanism.GAUSSIAN:
        best = optimal_gaussian(consts, T_cap)
        cands = [best]
        other_T = 0 if best.T else T_cap
        b_other = consts.N
        prov = "Gaussian-sol2" if best.T else "Gaussian-sol1"
        cands.append(
            CandidateSolution(other_T, b_other, float(bound_gaussian(other_T, b_other, consts)), prov,
                              capped=bool(other_T), limit_value=gaussian_limit(consts) if other_T else None)
        )
        cands.append(acs_minimize(mech, consts, T_cap).solution)
    else:
        raise ValueError("plans exist only for the Laplace and Gaussian mechanisms")
    warnings = [USELESS_WARNING] if best.T == 0 else []
    return Plan(mech.value, cands, best, consts, int(T_cap), warnings)


def write_plan(plan: Plan, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan.to_dict(), fh, indent=2)
