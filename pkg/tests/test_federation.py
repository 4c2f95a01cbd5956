import csv
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsgd_dp import model
from fedsgd_dp.federation import (
    FederationError,
    FederationSchedule,
    aggregate,
    client_streams,
    clipped_gradient,
    learning_rate,
    local_batch,
    reference_optimum,
    run_federation,
    select_clients_random,
    select_clients_round_robin,
)
from fedsgd_dp.mechanisms import DpMechanismSpec, Mechanism, PrivacyBudget

NONE = DpMechanismSpec()
LAP = DpMechanismSpec(Mechanism.LAPLACE, xi1=1.0)
GAU = DpMechanismSpec(Mechanism.GAUSSIAN, xi2=1.0, q=0.1)


def _sched(partition, b, T, **kw):
    pooled = partition.pooled()
    return FederationSchedule(partition.N, b, T, mu=0.1, lam=model.smoothness_constant(pooled, 0.1), l2=0.1, **kw)


@given(N=st.integers(1, 12), data=st.data())
@settings(max_examples=60)
def test_round_robin_is_fair(N, data):
    b = data.draw(st.integers(1, N))
    rounds = N  # b*T is a multiple of N
    counts = Counter(i for t in range(rounds) for i in select_clients_round_robin(t, N, b))
    assert all(counts[i] == b for i in range(N))
    for t in range(rounds):
        sel = select_clients_round_robin(t, N, b)
        assert len(set(sel)) == b


def test_round_robin_order():
    assert select_clients_round_robin(0, 5, 2) == [0, 1]
    assert select_clients_round_robin(2, 5, 2) == [4, 0]
    with pytest.raises(ValueError):
        select_clients_round_robin(0, 3, 4)


def test_random_selection_sorted_and_distinct(rng):
    for _ in range(50):
        sel = select_clients_random(rng, 9, 4)
        assert sel == sorted(set(sel)) and len(sel) == 4


def test_learning_rate():
    assert learning_rate(0, 0.1, 2.0) == pytest.approx(0.5)
    assert learning_rate(10, 0.1, 2.0) == pytest.approx(2 / (0.1 * (10 + 40)))
    with pytest.raises(ValueError):
        learning_rate(-1, 1, 1)


@pytest.mark.parametrize(
    "kw", [dict(N=0), dict(b=0), dict(b=4), dict(T=-1), dict(mu=0), dict(lam=-1), dict(l2=-1),
           dict(selection="x"), dict(init="x")]
)
def test_schedule_validation(kw):
    args = dict(N=3, b=1, T=1, mu=1.0, lam=1.0)
    args.update(kw)
    with pytest.raises(ValueError):
        FederationSchedule(**args)


def test_local_batch_size(partition, rng):
    ds = partition.client_datasets[0]
    assert local_batch(ds, 1.0, rng) is ds
    batch = local_batch(ds, 0.1, rng)
    assert len(batch) == math.ceil(0.1 * len(ds))
    rows = [tuple(r) for r in batch.features]
    assert len(set(rows)) == len(rows)


def test_clipped_gradient_modes(partition):
    ds = partition.client_datasets[0]
    theta = np.random.default_rng(0).normal(scale=3, size=model.n_params(ds.n_features, ds.n_classes))
    raw = model.gradient(theta, ds, 0.1)
    np.testing.assert_array_equal(clipped_gradient(theta, ds, NONE, 0.1), raw)
    tight = DpMechanismSpec(Mechanism.LAPLACE, xi1=0.01)
    assert model.norm(clipped_gradient(theta, ds, tight, 0.1), "l1") <= 0.01
    per = DpMechanismSpec(Mechanism.GAUSSIAN, xi2=0.01, q=0.5, clip_mode="sample")
    assert model.norm(clipped_gradient(theta, ds, per, 0.1), "l2") <= 0.01 + 1e-15


class TestAggregate:
    def test_weighted_rescaled_sum(self):
        replies = [(2, np.array([1.0, 2.0])), (0, np.array([3.0, -1.0]))]
        out = aggregate(replies, [10, 20, 30], N=3, b=2)
        np.testing.assert_allclose(out, 1.5 * (10 / 60 * np.array([3.0, -1.0]) + 30 / 60 * np.array([1.0, 2.0])))

    def test_order_independent(self):
        r = [(i, np.random.default_rng(i).normal(size=4)) for i in range(5)]
        a = aggregate(r, [3, 1, 4, 1, 5], 5, 5)
        b = aggregate(r[::-1], [3, 1, 4, 1, 5], 5, 5)
        np.testing.assert_array_equal(a, b)

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([(0, np.zeros(2))], [1, 1], 2, 2)
        with pytest.raises(ValueError):
            aggregate([(0, np.zeros(2)), (0, np.zeros(2))], [1, 1], 2, 2)


@pytest.mark.parametrize("N", [2, 10])
def test_full_participation_without_noise_is_centralized_gd(blobs, N):
    from fedsgd_dp.data import partition_noniid

    part = partition_noniid(blobs, N, 2 if N == 10 else 5, seed=1)
    sched = _sched(part, N, 15)
    trace = run_federation(part, NONE, [PrivacyBudget(1.0)] * N, sched)
    pooled = part.pooled()
    theta = np.zeros_like(trace.final_params)
    for t in range(15):
        theta = theta - sched.eta(t) * model.gradient(theta, pooled, 0.1)
    np.testing.assert_allclose(trace.final_params, theta, rtol=1e-12, atol=1e-14)


def test_single_client_noise_free_reference(blobs):
    from fedsgd_dp.data import ClientPartition

    part = ClientPartition((blobs,))
    sched = _sched(part, 1, 10)
    trace = run_federation(part, NONE, [PrivacyBudget(1.0)], sched)
    theta = np.zeros_like(trace.final_params)
    for t in range(10):
        theta = theta - sched.eta(t) * model.gradient(theta, blobs, 0.1)
    np.testing.assert_array_equal(trace.final_params, theta)


def test_deterministic_replay(partition):
    buds = [PrivacyBudget(1.0, 1e-5)] * partition.N
    runs = [run_federation(partition, GAU, buds, _sched(partition, 3, 12, base_seed=7)) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].final_params, runs[1].final_params)
    other = run_federation(partition, GAU, buds, _sched(partition, 3, 12, base_seed=8))
    assert not np.array_equal(runs[0].final_params, other.final_params)


def test_client_streams_are_independent():
    server, clients = client_streams(3, 4)
    draws = [c.random() for c in clients]
    assert len(set(draws)) == 4
    _, again = client_streams(3, 4)
    assert [c.random() for c in again] == draws


def test_trace_contents(partition, tmp_path):
    opt = reference_optimum(partition, 0.1)
    trace = run_federation(partition, LAP, [PrivacyBudget(5.0)] * partition.N, _sched(partition, 2, 8),
                           reference_optimum=opt, test_data=partition.pooled())
    assert len(trace) == 8
    assert trace.column("eta_t")[0] == pytest.approx(1 / _sched(partition, 2, 8).lam)
    assert np.all(trace.column("dist_sq_opt") >= 0)
    assert np.all((trace.column("test_acc") >= 0) & (trace.column("test_acc") <= 1))
    trace.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "selected_ids", "train_loss", "test_acc", "eta_t", "dist_sq_opt"]
    assert rows[1][1] == "0 1" and len(rows) == 9


def test_missing_test_set_gives_nan(partition):
    trace = run_federation(partition, NONE, [PrivacyBudget(1.0)] * partition.N, _sched(partition, 1, 2))
    assert math.isnan(trace.records[-1].test_acc)


def test_random_selection_and_gaussian_init(partition):
    sched = _sched(partition, 4, 5, selection="random", init="gaussian")
    trace = run_federation(partition, NONE, [PrivacyBudget(1.0)] * partition.N, sched)
    assert np.any(trace.initial_params != 0)
    assert all(len(r.selected) == 4 for r in trace.records)


def test_input_validation(partition):
    with pytest.raises(ValueError):
        run_federation(partition, NONE, [PrivacyBudget(1.0)], _sched(partition, 1, 1))
    with pytest.raises(ValueError):
        run_federation(partition, LAP, [PrivacyBudget(1.0, 0.1)] * partition.N, _sched(partition, 1, 1))
    wrong = FederationSchedule(3, 1, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        run_federation(partition, NONE, [PrivacyBudget(1.0)] * 3, wrong)


def test_divergence_is_reported_with_round(partition):
    sched = FederationSchedule(partition.N, 1, 3, mu=1.0, lam=1e-310, l2=0.0)
    with pytest.raises(FederationError) as err:
        run_federation(partition, NONE, [PrivacyBudget(1.0)] * partition.N, sched)
    assert err.value.round_index == 0
