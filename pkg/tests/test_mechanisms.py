import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsgd_dp.mechanisms import (
    DpMechanismSpec,
    Mechanism,
    PrivacyBudget,
    aggregated_noise_variance,
    gaussian_sigma,
    laplace_scale,
    noise_scale,
    sample_laplace,
    sample_noise,
    validate_gaussian_epsilon,
)


@dataclass
class Sched:
    N: int
    b: int
    T: int


def test_laplace_scale_formula():
    # 2 b T xi / (N d_i eps)
    assert laplace_scale(PrivacyBudget(0.5), 3.0, 2, 10, 4, 100) == pytest.approx(2 * 2 * 10 * 3 / (4 * 100 * 0.5))


def test_gaussian_sigma_formula():
    bud = PrivacyBudget(2.0, 1e-5)
    s = gaussian_sigma(bud, 1.5, 3, 50, 10, 200, 1.2)
    assert s**2 == pytest.approx((1.2 * 1.5 / (200 * 2.0)) ** 2 * (3 * 50 / 10) * math.log(1e5))


def test_gaussian_needs_delta():
    with pytest.raises(ValueError):
        gaussian_sigma(PrivacyBudget(1.0), 1.0, 1, 1, 1, 1, 1.0)


@pytest.mark.parametrize("kw", [dict(b=0), dict(T=0), dict(d_i=0), dict(b=5, N=4)])
def test_calibration_rejects_bad_arguments(kw):
    args = dict(xi1=1.0, b=1, T=1, N=4, d_i=10)
    args.update(kw)
    with pytest.raises(ValueError):
        laplace_scale(PrivacyBudget(1.0), **args)


@pytest.mark.parametrize("eps, delta", [(0.0, 0.0), (-1.0, 0.0), (1.0, 1.0), (1.0, -0.1)])
def test_budget_validation(eps, delta):
    with pytest.raises(ValueError):
        PrivacyBudget(eps, delta)


def test_spec_invariants():
    with pytest.raises(ValueError):
        DpMechanismSpec(Mechanism.LAPLACE, q=0.5)
    with pytest.raises(ValueError):
        DpMechanismSpec(Mechanism.GAUSSIAN, q=1.0)
    with pytest.raises(ValueError):
        DpMechanismSpec(Mechanism.GAUSSIAN, q=0.1, clip_mode="row")
    assert DpMechanismSpec("laplace").kind is Mechanism.LAPLACE
    assert DpMechanismSpec(Mechanism.LAPLACE, xi1=2.0).clip == (2.0, "l1")
    assert DpMechanismSpec(Mechanism.GAUSSIAN, xi2=3.0, q=0.1).clip == (3.0, "l2")
    assert DpMechanismSpec().clip is None
    assert DpMechanismSpec(Mechanism.GAUSSIAN, q=0.1).to_dict()["kind"] == "gaussian"


def test_budget_mechanism_compatibility():
    with pytest.raises(ValueError):
        DpMechanismSpec(Mechanism.LAPLACE).check_budget(PrivacyBudget(1.0, 1e-5))
    with pytest.raises(ValueError):
        DpMechanismSpec(Mechanism.GAUSSIAN, q=0.1).check_budget(PrivacyBudget(1.0))


def test_gaussian_epsilon_range_is_strict():
    assert validate_gaussian_epsilon(0.1, 100, 10, 9.99)
    assert not validate_gaussian_epsilon(0.1, 100, 10, 10.0)


def test_no_mechanism_gives_zero_noise():
    spec = DpMechanismSpec()
    assert np.all(sample_noise(spec, PrivacyBudget(1.0), Sched(4, 2, 10), 50, 6, np.random.default_rng(0)) == 0)
    assert noise_scale(spec, PrivacyBudget(1.0), 1, 1, 1, 1) == 0
    assert aggregated_noise_variance(spec, [PrivacyBudget(1.0)] * 2, Sched(2, 1, 1), 0.1, 3, 10, 2) == 0


def test_laplace_sampler_moments():
    x = sample_laplace(2.0, 400_000, np.random.default_rng(0))
    assert np.all(np.isfinite(x))
    assert abs(x.mean()) < 0.02
    assert x.var() == pytest.approx(8.0, rel=0.02)  # 2 s^2
    assert np.mean(np.abs(x)) == pytest.approx(2.0, rel=0.01)


def test_laplace_sampler_endpoint_is_finite():
    class Edge:
        def random(self, size):
            return np.zeros(size)

    assert np.all(np.isfinite(sample_laplace(1.0, 3, Edge())))


def test_sample_noise_uses_calibrated_scale():
    spec = DpMechanismSpec(Mechanism.GAUSSIAN, xi2=2.0, q=0.1, c2=1.0)
    bud = PrivacyBudget(1.0, 1e-3)
    w = sample_noise(spec, bud, Sched(5, 2, 40), 80, 200_000, np.random.default_rng(1))
    assert w.std() == pytest.approx(gaussian_sigma(bud, 2.0, 2, 40, 5, 80, 1.0), rel=0.01)


def test_laplace_toy_variance_is_one():
    # eta=1, p=1, N=b=1, T=1, xi1=1, d=1, eps=sqrt(8): 8 * 1/8 = 1
    spec = DpMechanismSpec(Mechanism.LAPLACE, xi1=1.0)
    v = aggregated_noise_variance(spec, [PrivacyBudget(math.sqrt(8))], Sched(1, 1, 1), 1.0, 1, 1.0, 1)
    assert v == pytest.approx(1.0)


@given(b=st.integers(1, 10), T=st.integers(1, 500), eps=st.floats(0.1, 10))
@settings(max_examples=50)
def test_gaussian_aggregate_is_independent_of_b(b, T, eps):
    spec = DpMechanismSpec(Mechanism.GAUSSIAN, q=0.1)
    buds = [PrivacyBudget(eps, 1e-5)] * 10
    a = aggregated_noise_variance(spec, buds, Sched(10, b, T), 0.1, 7, 1000.0, 10)
    ref = aggregated_noise_variance(spec, buds, Sched(10, 1, T), 0.1, 7, 1000.0, 10)
    assert a == pytest.approx(ref, rel=1e-12)


@given(b=st.integers(1, 10), T=st.integers(1, 500))
@settings(max_examples=50)
def test_laplace_aggregate_scales_with_b_and_t_squared(b, T):
    spec = DpMechanismSpec(Mechanism.LAPLACE)
    buds = [PrivacyBudget(1.0)] * 10
    a = aggregated_noise_variance(spec, buds, Sched(10, b, T), 0.1, 7, 1000.0, 10)
    ref = aggregated_noise_variance(spec, buds, Sched(10, 1, 1), 0.1, 7, 1000.0, 10)
    assert a == pytest.approx(ref * b * T**2, rel=1e-12)


def test_aggregate_checks_budget_count():
    with pytest.raises(ValueError):
        aggregated_noise_variance(DpMechanismSpec(Mechanism.LAPLACE), [PrivacyBudget(1.0)], Sched(2, 1, 1), 1, 1, 1, 2)
