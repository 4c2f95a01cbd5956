"""Agreement checks between analytic results and their oracles.

Each ``check_*`` function draws random instances from a seed, compares an
analytic quantity with an independent oracle, and returns one
:class:`CheckResult`. The ``validate`` CLI verb and the test-suite share them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import bounds, model, oracles
from .bounds import BoundConstants
from .data import make_synthetic_dataset, partition_noniid
from .estimate import client_spread
from .mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget, aggregated_noise_variance


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({len(self.failures)} failing, first: {self.failures[0]})" if self.failures else ""
        return f"{status} {self.name}: {self.cases} cases{extra}"


def _result(name: str, cases: int, failures: list[str]) -> CheckResult:
    return CheckResult(name, not failures, cases, failures)


# ---------------------------------------------------------------- random instances


def random_laplace_constants(rng: np.random.Generator, max_N: int = 10, max_T_star: float = 5_000.0) -> BoundConstants:
    """Random Laplace constants whose fixed-``b`` optima stay below ``max_T_star``."""
    while True:
        N = int(rng.integers(2, max_N + 1))
        mu = float(rng.uniform(0.05, 1.0))
        consts = BoundConstants(
            mu=mu,
            lam=mu * float(rng.uniform(1.0, 10.0)),
            G=float(rng.uniform(0.1, 10.0)),
            Gamma=float(rng.uniform(0.0, 1.0)),
            Y0=float(10 ** rng.uniform(-1, 2)),
            p=int(rng.integers(5, 101)),
            d=float(N * rng.integers(50, 501)),
            N=N,
            epsilons=tuple(10 ** rng.uniform(-0.3, 1.0, N)),
            xi1=float(10 ** rng.uniform(-1, 0.7)),
        )
        if bounds.optimal_T_fixed_b_laplace(consts, 1) <= max_T_star:
            return consts


def random_gaussian_constants(rng: np.random.Generator, max_N: int = 10) -> BoundConstants:
    N = int(rng.integers(2, max_N + 1))
    mu = float(rng.uniform(0.05, 1.0))
    sizes = tuple(float(s) for s in rng.integers(50, 501, N))
    return BoundConstants(
        mu=mu,
        lam=mu * float(rng.uniform(1.0, 10.0)),
        G=float(rng.uniform(0.1, 10.0)),
        Gamma=float(rng.uniform(0.0, 1.0)),
        Y0=float(10 ** rng.uniform(-1, 2)),
        p=int(rng.integers(5, 101)),
        d=float(sum(sizes)),
        N=N,
        epsilons=tuple(10 ** rng.uniform(-1.5, 1.0, N)),
        deltas=tuple(10 ** rng.uniform(-6, -2, N)),
        xi2=float(10 ** rng.uniform(-1, 0.7)),
        Lambdas=tuple(rng.uniform(0.0, 3.0, N)),
        client_sizes=sizes,
        q=float(rng.uniform(0.01, 0.5)),
        c2=float(rng.uniform(0.5, 2.0)),
    )


@dataclass(frozen=True)
class _Sched:
    N: int
    b: int
    T: int


# ---------------------------------------------------------------- stochastic checks


def check_noise_variance(n_configs: int = 20, trials: int = 100_000, seed: int = 0, k: float = 3.0) -> CheckResult:
    """Simulated aggregated noise power vs the closed forms, both mechanisms."""
    rng = np.random.default_rng(seed)
    failures = []
    for c in range(n_configs):
        kind = Mechanism.LAPLACE if c % 2 == 0 else Mechanism.GAUSSIAN
        N = int(rng.integers(1, 11))
        b = int(rng.integers(1, N + 1))
        p = int(rng.integers(1, 51))
        T = int(rng.integers(1, 200))
        # equal client sizes: the closed forms assume sum (d_i/d)^2 / d_i^2 = N / d^2
        d_i = int(rng.integers(20, 500))
        sizes = [d_i] * N
        if kind is Mechanism.LAPLACE:
            spec = DpMechanismSpec(kind, xi1=float(rng.uniform(0.1, 5)))
            budgets = [PrivacyBudget(float(rng.uniform(0.5, 10)))] * N
        else:
            spec = DpMechanismSpec(kind, xi2=float(rng.uniform(0.1, 5)), q=0.1, c2=float(rng.uniform(0.5, 2)))
            budgets = [PrivacyBudget(float(e), float(dl)) for e, dl in
                       zip(rng.uniform(0.5, 10, N), 10 ** rng.uniform(-6, -2, N))]
        sched = _Sched(N, b, T)
        eta = float(rng.uniform(0.01, 1.0))
        est = oracles.mc_noise_variance(spec, budgets, sched, eta, trials, seed + 1 + c, p, sizes)
        exact = aggregated_noise_variance(spec, budgets, sched, eta, p, float(sum(sizes)), N)
        if not est.within(exact, k):
            failures.append(f"{kind.value} N={N} b={b} p={p}: mc {est.mean:.6g}±{est.stderr:.2g} vs {exact:.6g}")
    return _result("noise variance matches closed form", n_configs, failures)


def check_sampling_bias(n_cases: int = 10, trials: int = 20_000, seed: int = 0, k: float = 4.0) -> CheckResult:
    """Client subsampling with the ``N/b`` rescale is unbiased; exact on all ``N = 3`` subsets."""
    rng = np.random.default_rng(seed)
    failures = []
    for c in range(n_cases):
        N = int(rng.integers(2, 9))
        b = int(rng.integers(1, N + 1))
        w = rng.dirichlet(np.ones(N))
        v = rng.normal(size=(N, 4))
        est = oracles.mc_sampling_bias(v, w, N, b, trials, seed + 1 + c)
        if b == N and est.mean != 0.0:
            failures.append(f"b=N={N}: nonzero deviation {est.mean:.3g}")
        elif est.mean > k * est.stderr:
            failures.append(f"N={N} b={b}: deviation {est.mean:.3g} > {k}*{est.stderr:.3g}")
    v3 = [[Fraction(1), Fraction(-2)], [Fraction(3, 7), Fraction(5)], [Fraction(-4, 3), Fraction(2, 9)]]
    w3 = [Fraction(1, 6), Fraction(1, 3), Fraction(1, 2)]
    for b in (1, 2, 3):
        dev = oracles.exhaustive_sampling_bias(v3, w3, b)
        if any(x != 0 for x in dev):
            failures.append(f"exhaustive N=3 b={b}: deviation {dev}")
    return _result("client sampling is unbiased", n_cases + 3, failures)


def _random_partition(rng: np.random.Generator):
    N = int(rng.choice([2, 5, 10]))
    c = {2: 5, 5: 2, 10: 2}[N]
    ds = make_synthetic_dataset(int(rng.integers(300, 800)), int(rng.integers(2, 6)), 10,
                                float(rng.uniform(0.5, 3.0)), int(rng.integers(1 << 30)))
    return partition_noniid(ds, N, c, int(rng.integers(1 << 30)))


def gradient_variance_bound(partition, params, b: int, q: float, l2: float = 0.0) -> float:
    """Variance bound with ``G^2 = max_i mean_zeta ||grad f_i(theta, zeta)||^2`` and per-client spreads."""
    G2 = 0.0
    for ds in partition.client_datasets:
        rows = model.per_sample_gradients(params, ds, l2)
        G2 = max(G2, float(np.mean(np.einsum("ij,ij->i", rows, rows))))
    bound = oracles.selection_variance_bound(partition.N, b, math.sqrt(G2))
    if q < 1:
        Lam = client_spread(params, partition, l2)
        bound = oracles.subsampled_variance_bound(partition.N, b, math.sqrt(G2), partition.client_sizes, Lam, q)
    return bound


def check_gradient_variance(n_partitions: int = 10, trials: int = 4_000, seed: int = 0, k: float = 3.0) -> CheckResult:
    """Sampled global gradient variance stays under the client-sampling and batch-sampling bounds."""
    rng = np.random.default_rng(seed)
    failures = []
    cases = 0
    for c in range(n_partitions):
        part = _random_partition(rng)
        ds0 = part.client_datasets[0]
        params = rng.normal(scale=0.5, size=model.n_params(ds0.n_features, ds0.n_classes))
        for q in (1.0, float(rng.uniform(0.05, 0.5))):
            b = int(rng.integers(1, part.N + 1))
            cases += 1
            est = oracles.mc_gradient_variance(part, params, b, q, trials, seed + 100 * c + cases)
            bound = gradient_variance_bound(part, params, b, q)
            if est.mean > bound + k * est.stderr:
                failures.append(f"N={part.N} b={b} q={q:.3f}: {est.mean:.4g}±{est.stderr:.2g} > {bound:.4g}")
        cases += 1
        est = oracles.mc_gradient_variance(part, params, part.N, 1.0, 1000, seed)
        if est.mean != 0.0:
            failures.append(f"b=N, q=1: nonzero variance {est.mean:.3g}")
    return _result("gradient variance within bounds", cases, failures)


# ---------------------------------------------------------------- deterministic checks


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def check_closed_forms_vs_grid(n_consts: int = 100, seed: int = 0, rtol: float = 1e-9) -> CheckResult:
    """Closed forms, KKT enumeration and the Gaussian rule against exhaustive grids."""
    rng = np.random.default_rng(seed)
    failures = []
    for c in range(n_consts):
        lap = random_laplace_constants(rng)
        b = int(rng.integers(1, lap.N + 1))
        Tb = bounds.optimal_T_fixed_b_laplace(lap, b)
        T_max = int(max(2 * math.ceil(Tb) + 10, 200))
        g = oracles.grid_minimize_bound(Mechanism.LAPLACE, lap, T_max, b=b)
        if abs(g.T - Tb) > 1:
            failures.append(f"#{c} T*(b={b}) = {Tb:.3f}, grid {g.T}")
        T = int(rng.integers(1, 2 * max(int(Tb), 1) + 2))
        bT = bounds.optimal_b_fixed_T_laplace(lap, T)
        g = oracles.grid_minimize_bound(Mechanism.LAPLACE, lap, T_max, T=T)
        if abs(g.b - bT) > 1:
            failures.append(f"#{c} b*(T={T}) = {bT:.3f}, grid {g.b}")
        T_max = int(max(2 * math.ceil(bounds.optimal_T_fixed_b_laplace(lap, 1)) + 10, 200))
        kkt = bounds.kkt_solutions_laplace(lap, T_max)
        g = oracles.grid_minimize_bound(Mechanism.LAPLACE, lap, T_max)
        if _rel(kkt.best.bound_value, g.value) > rtol:
            failures.append(f"#{c} KKT {kkt.best.bound_value:.12g} at ({kkt.best.T},{kkt.best.b}) vs grid {g.value:.12g} at ({g.T},{g.b})")

        gau = random_gaussian_constants(rng)
        T_cap = int(rng.integers(10, 2_000))
        sol = bounds.optimal_gaussian(gau, T_cap)
        g = oracles.grid_minimize_bound(Mechanism.GAUSSIAN, gau, T_cap)
        if _rel(sol.bound_value, g.value) > rtol:
            failures.append(f"#{c} Gaussian {sol.bound_value:.12g} at ({sol.T},{sol.b}) vs grid {g.value:.12g} at ({g.T},{g.b})")
    return _result("optimizers match grid oracle", n_consts, failures)


def _central_dT(bound, consts, T, b, h):
    step = h * max(T, 1.0)
    return (bound(T + step, b, consts) - bound(T - step, b, consts)) / (2 * step)


def _central_db(bound, consts, T, b, h):
    step = h * b
    return (bound(T, b + step, consts) - bound(T, b - step, consts)) / (2 * step)


def check_biconvexity(n_probes: int = 1_000, seed: int = 0, slack: float = 1e-9, stat_tol: float = 1e-6) -> CheckResult:
    """Midpoint convexity along each coordinate and stationarity of the closed forms."""
    rng = np.random.default_rng(seed)
    failures = []
    for c in range(n_probes):
        mech = Mechanism.LAPLACE if c % 2 == 0 else Mechanism.GAUSSIAN
        consts = random_laplace_constants(rng) if mech is Mechanism.LAPLACE else random_gaussian_constants(rng)
        bound = bounds.bound_for(mech)
        b = float(rng.integers(1, consts.N + 1))
        T1, T2 = rng.uniform(0, 2_000, 2)
        u1, u2 = bound(T1, b, consts), bound(T2, b, consts)
        mid = bound((T1 + T2) / 2, b, consts)
        if mech is Mechanism.LAPLACE:
            if mid > (u1 + u2) / 2 + slack * max(abs(u1 + u2) / 2, 1.0):
                failures.append(f"#{c} laplace not convex in T at b={b}")
        else:
            # A / (T + gamma) + E3 with A of either sign: monotone, convex only for A >= 0
            lo, hi = sorted((T1, T2))
            ulo, umid, uhi = bound(lo, b, consts), bound((lo + hi) / 2, b, consts), bound(hi, b, consts)
            tol = slack * max(abs(ulo), 1.0)
            if not (ulo + tol >= umid >= uhi - tol or ulo - tol <= umid <= uhi + tol):
                failures.append(f"#{c} gaussian not monotone in T at b={b}")
        T = float(rng.uniform(0, 2_000))
        b1, b2 = rng.uniform(1, consts.N, 2)
        lhs = bound(T, (b1 + b2) / 2, consts)
        rhs = (bound(T, b1, consts) + bound(T, b2, consts)) / 2
        if lhs > rhs + slack * max(abs(rhs), 1.0):
            failures.append(f"#{c} {mech.value} not convex in b at T={T:.1f}")
        if mech is not Mechanism.LAPLACE:
            continue
        # interior stationary points only; clamped optima sit on the boundary
        Tb = bounds.optimal_T_fixed_b_laplace(consts, b)
        if Tb > 1.0:
            dT = _central_dT(bound, consts, Tb, b, 1e-5)
            scale = bound(Tb, b, consts) / (Tb + consts.gamma)
            if abs(dT) > stat_tol * scale:
                failures.append(f"#{c} dU/dT = {dT:.3g} at T*(b) = {Tb:.3f}")
        T = float(rng.uniform(1, 2_000))
        bT = bounds.optimal_b_fixed_T_laplace(consts, T)
        if 1.0 + 1e-3 < bT < consts.N - 1e-3:
            db = _central_db(bound, consts, T, bT, 1e-6)
            scale = bound(T, bT, consts) / bT
            if abs(db) > stat_tol * scale:
                failures.append(f"#{c} dU/db = {db:.3g} at b*(T) = {bT:.3f}")
    return _result("biconvexity and stationarity", n_probes, failures)


def check_asymptotes(n_consts: int = 20, seed: int = 0) -> CheckResult:
    """Laplace slope ``C2 b`` at large ``T``; Gaussian ``(U - E3)(T + gamma)`` constant in ``T``."""
    rng = np.random.default_rng(seed)
    failures = []
    T = 1e5
    for c in range(n_consts):
        lap = random_laplace_constants(rng)
        _, C2, _ = bounds.laplace_coefficients(lap)
        b = float(rng.integers(1, lap.N + 1))
        slope = bounds.bound_laplace(T + 1, b, lap) - bounds.bound_laplace(T, b, lap)
        if _rel(slope, C2 * b) > 0.01:
            failures.append(f"#{c} Laplace slope {slope:.6g} vs C2 b = {C2 * b:.6g}")
        Ts = np.linspace(float(math.ceil(bounds.optimal_T_fixed_b_laplace(lap, b))) + 1, 1e4, 200)
        if np.any(np.diff(bounds.bound_laplace(Ts, b, lap)) <= 0):
            failures.append(f"#{c} Laplace bound not increasing past T*(b)")

        gau = random_gaussian_constants(rng)
        _, _, E3 = bounds.gaussian_coefficients(gau)
        b = float(rng.integers(1, gau.N + 1))
        Ts = np.array([0.0, 1.0, 10.0, 1e3, 1e5])
        prod = (bounds.bound_gaussian(Ts, b, gau) - E3) * (Ts + gau.gamma)
        if np.max(np.abs(prod - prod[0])) > 1e-9 * max(abs(prod[0]), 1.0):
            failures.append(f"#{c} Gaussian (U-E3)(T+gamma) varies: {prod}")
    return _result("bound asymptotes", n_consts, failures)


def run_all(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    if quick:
        return [
            check_noise_variance(6, 20_000, seed),
            check_sampling_bias(4, 5_000, seed),
            check_gradient_variance(3, 2_000, seed),
            check_closed_forms_vs_grid(20, seed),
            check_biconvexity(200, seed),
            check_asymptotes(10, seed),
        ]
    return [
        check_noise_variance(seed=seed),
        check_sampling_bias(seed=seed),
        check_gradient_variance(seed=seed),
        check_closed_forms_vs_grid(seed=seed),
        check_biconvexity(seed=seed),
        check_asymptotes(seed=seed),
    ]
