import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsgd_dp.data import (
    ClientPartition,
    Dataset,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    PartitionError,
    load_csv,
    load_idx_dataset,
    make_synthetic_dataset,
    partition_noniid,
    save_csv,
    scale_to_unit_ball,
    subsample_partition,
    train_test_split,
    write_idx_dataset,
)


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((3, 2)), [0, 1, 1], 2)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
    with pytest.raises(ValueError):
        ds.labels[0] = 1


@pytest.mark.parametrize(
    "features, labels, k",
    [
        (np.zeros(3), [0, 1, 2], 3),
        (np.zeros((3, 2)), [0, 1], 3),
        (np.zeros((3, 2)), [0, 1, 3], 3),
        (np.zeros((2, 2)), [0.5, 1], 3),
        (np.zeros((2, 2)), [-1, 1], 3),
    ],
)
def test_dataset_rejects_bad_input(features, labels, k):
    with pytest.raises(ValueError):
        Dataset(features, labels, k)


def test_synthetic_labels_are_balanced():
    ds = make_synthetic_dataset(1000, 5, 10, 2.0, seed=0)
    assert np.bincount(ds.labels, minlength=10).tolist() == [100] * 10
    assert ds == make_synthetic_dataset(1000, 5, 10, 2.0, seed=0)
    assert ds != make_synthetic_dataset(1000, 5, 10, 2.0, seed=1)


def test_synthetic_zero_separation_centers_classes():
    ds = make_synthetic_dataset(20_000, 3, 2, 0.0, seed=0)
    for k in (0, 1):
        assert np.allclose(ds.features[ds.labels == k].mean(axis=0), 0.0, atol=0.05)
    with pytest.raises(ValueError):
        make_synthetic_dataset(10, 3, 1, 1.0, seed=0)


def test_train_test_split_is_disjoint_cover(blobs):
    tr, te = train_test_split(blobs, 100, seed=3)
    assert len(tr) == 500 and len(te) == 100
    rows = {tuple(r) for r in tr.features} | {tuple(r) for r in te.features}
    assert len(rows) == len(blobs)


def test_scale_to_unit_ball(blobs):
    norms = np.linalg.norm(blobs.features, axis=1)
    assert norms.max() == pytest.approx(1.0)
    zero = Dataset(np.zeros((2, 2)), [0, 1], 2)
    assert scale_to_unit_ball(zero) is zero


class TestPartition:
    def test_two_classes_per_client_equal_sizes(self, partition):
        assert partition.N == 10
        assert len(set(partition.client_sizes)) == 1
        for ds in partition.client_datasets:
            assert len(np.unique(ds.labels)) == 2
        assert partition.weights.sum() == pytest.approx(1.0)

    def test_every_class_used_equally(self, partition):
        counts = np.zeros(10, dtype=int)
        for ds in partition.client_datasets:
            counts[np.unique(ds.labels)] += 1
        assert counts.tolist() == [2] * 10

    def test_pooled_samples_are_distinct_rows_of_source(self, blobs, partition):
        pooled = partition.pooled()
        src = {tuple(r) for r in blobs.features}
        got = [tuple(r) for r in pooled.features]
        assert len(set(got)) == len(got)
        assert set(got) <= src

    def test_deterministic(self, blobs):
        a = partition_noniid(blobs, 5, 2, seed=9)
        b = partition_noniid(blobs, 5, 2, seed=9)
        assert all(x == y for x, y in zip(a.client_datasets, b.client_datasets))

    @pytest.mark.parametrize("N, c", [(3, 2), (0, 2), (10, 11)])
    def test_infeasible_layouts(self, blobs, N, c):
        with pytest.raises(PartitionError):
            partition_noniid(blobs, N, c, seed=0)

    def test_unequal_sizes_keep_every_sample(self):
        ds = make_synthetic_dataset(103, 2, 2, 1.0, seed=0)
        part = partition_noniid(ds, 2, 1, seed=0, equal_size=False)
        assert part.total_size == 103

    def test_empty_partition_rejected(self):
        with pytest.raises(PartitionError):
            ClientPartition(())

    def test_subsample(self, partition):
        half = subsample_partition(partition, 0.5, seed=0)
        assert half.client_sizes == tuple(int(np.ceil(0.5 * s)) for s in partition.client_sizes)
        assert subsample_partition(partition, 1.0, seed=0) is partition
        with pytest.raises(ValueError):
            subsample_partition(partition, 0.0, seed=0)


@given(
    N=st.sampled_from([1, 2, 5, 10]),
    seed=st.integers(0, 2**31),
)
@settings(max_examples=25, deadline=None)
def test_partition_property(N, seed):
    c = {1: 10, 2: 5, 5: 2, 10: 1}[N]
    ds = make_synthetic_dataset(200, 2, 10, 1.0, seed=seed % 1000)
    part = partition_noniid(ds, N, c, seed=seed)
    for client in part.client_datasets:
        assert len(np.unique(client.labels)) == c
    assert part.total_size <= len(ds)


class TestIdx:
    def _dataset(self):
        rng = np.random.default_rng(0)
        return Dataset(rng.integers(0, 256, (7, 12)) / 255.0, rng.integers(0, 10, 7), 10)

    def test_roundtrip(self, tmp_path):
        ds = self._dataset()
        write_idx_dataset(ds, tmp_path / "img", tmp_path / "lbl", shape=(3, 4))
        back = load_idx_dataset(tmp_path / "img", tmp_path / "lbl")
        assert back == ds

    def test_gzip(self, tmp_path):
        ds = self._dataset()
        write_idx_dataset(ds, tmp_path / "img", tmp_path / "lbl")
        for name in ("img", "lbl"):
            (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
        assert load_idx_dataset(tmp_path / "img.gz", tmp_path / "lbl.gz") == ds

    def test_bad_magic(self, tmp_path):
        ds = self._dataset()
        write_idx_dataset(ds, tmp_path / "img", tmp_path / "lbl")
        with pytest.raises(IdxMagicError):
            load_idx_dataset(tmp_path / "lbl", tmp_path / "img")

    def test_truncated_payload(self, tmp_path):
        ds = self._dataset()
        write_idx_dataset(ds, tmp_path / "img", tmp_path / "lbl")
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-5])
        with pytest.raises(IdxTruncatedError):
            load_idx_dataset(tmp_path / "img", tmp_path / "lbl")

    def test_count_mismatch(self, tmp_path):
        ds = self._dataset()
        write_idx_dataset(ds, tmp_path / "img", tmp_path / "lbl")
        (tmp_path / "lbl").write_bytes(struct.pack(">II", 0x801, 6) + bytes(6))
        with pytest.raises(IdxCountMismatchError):
            load_idx_dataset(tmp_path / "img", tmp_path / "lbl")

    def test_shape_must_cover_features(self, tmp_path):
        with pytest.raises(ValueError):
            write_idx_dataset(self._dataset(), tmp_path / "i", tmp_path / "l", shape=(5, 5))


def test_csv_roundtrip(tmp_path, blobs):
    save_csv(blobs, tmp_path / "d.csv")
    assert load_csv(tmp_path / "d.csv", n_classes=10) == blobs
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_csv(tmp_path / "bad.csv")
