"""Datasets, IDX/CSV I/O and non-iid client partitioning."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class PartitionError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled samples. Arrays are made read-only on construction."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[1] < 1:
            raise ValueError("need at least one feature")
        if y.ndim != 1 or len(y) != x.shape[0]:
            raise ValueError("labels length must match feature rows")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class ClientPartition:
    client_datasets: tuple[Dataset, ...]
    client_sizes: tuple[int, ...] = field(init=False)
    total_size: int = field(init=False)

    def __post_init__(self):
        datasets = tuple(self.client_datasets)
        if not datasets:
            raise PartitionError("a partition needs at least one client")
        object.__setattr__(self, "client_datasets", datasets)
        object.__setattr__(self, "client_sizes", tuple(len(ds) for ds in datasets))
        object.__setattr__(self, "total_size", sum(self.client_sizes))

    @property
    def N(self) -> int:
        return len(self.client_datasets)

    @property
    def weights(self) -> np.ndarray:
        """d_i / d for every client."""
        return np.asarray(self.client_sizes, dtype=np.float64) / self.total_size

    def pooled(self) -> Dataset:
        first = self.client_datasets[0]
        return Dataset(
            np.concatenate([ds.features for ds in self.client_datasets]),
            np.concatenate([ds.labels for ds in self.client_datasets]),
            first.n_classes,
        )


def make_synthetic_dataset(
    n_samples: int,
    n_features: int,
    n_classes: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with exactly balanced labels.

    Class means are random directions scaled to norm ``class_separation``;
    samples are ``mean + N(0, I)``. A separation of 0 puts every class on
    the origin.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    if n_samples < 1 or n_features < 1:
        raise ValueError("n_samples and n_features must be positive")
    if class_separation < 0:
        raise ValueError("class_separation must be nonnegative")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = class_separation * directions
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = means[labels] + rng.standard_normal((n_samples, n_features))
    return Dataset(features, labels, n_classes)


def scale_to_unit_ball(dataset: Dataset, reference: Dataset | None = None) -> Dataset:
    """Divide every feature row by the largest row norm of ``reference`` (default: ``dataset``).

    Keeps the smoothness constant of the logistic loss near 1/2.
    """
    ref = dataset if reference is None else reference
    r = float(np.sqrt(np.max(np.einsum("ij,ij->i", ref.features, ref.features))))
    if r == 0:
        return dataset
    return Dataset(dataset.features / r, dataset.labels, dataset.n_classes)


def train_test_split(dataset: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < n_test < len(dataset):
        raise ValueError("n_test must be between 1 and len(dataset) - 1")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxMagicError(f"{path}: file too short for an IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    n_bytes = math.prod(dims)
    payload = raw[header_len:]
    if len(payload) < n_bytes:
        raise IdxTruncatedError(f"{path}: payload has {len(payload)} bytes, header implies {n_bytes}")
    return dims, payload[:n_bytes]


def load_idx_dataset(image_path, label_path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1]."""
    img_dims, img_bytes = _read_idx(image_path, IDX_IMAGES_MAGIC)
    lbl_dims, lbl_bytes = _read_idx(label_path, IDX_LABELS_MAGIC)
    if img_dims[0] != lbl_dims[0]:
        raise IdxCountMismatchError(f"{img_dims[0]} images but {lbl_dims[0]} labels")
    n = img_dims[0]
    pixels = np.frombuffer(img_bytes, dtype=np.uint8).reshape(n, -1)
    labels = np.frombuffer(lbl_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(pixels.astype(np.float64) / 255.0, labels, n_classes)


def write_idx_dataset(dataset: Dataset, image_path, label_path, shape=None) -> None:
    """Write features (expected in [0, 1]) back to the IDX byte layout."""
    n = len(dataset)
    shape = tuple(shape) if shape is not None else (1, dataset.n_features)
    if len(shape) != 2 or math.prod(shape) != dataset.n_features:
        raise ValueError("shape must be (rows, cols) covering every feature")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    dims = (n, *shape)
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(f">{len(dims)}I", *dims))
        fh.write(pixels.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def save_csv(dataset: Dataset, path) -> None:
    header = [f"f{k}" for k in range(dataset.n_features)] + ["label"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        rows = [r for r in reader if r]
    feats = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(feats.reshape(len(rows), len(header) - 1), labels, n_classes)


def partition_noniid(
    dataset: Dataset,
    N: int,
    classes_per_client: int,
    seed: int,
    equal_size: bool = True,
) -> ClientPartition:
    """Shard partition: every client holds samples of exactly ``classes_per_client`` classes.

    Class order is shuffled, then client ``i`` is assigned classes
    ``order[(i*c + j) % K]`` for ``j < c``. Each class is cut into as many
    equal shards as clients that hold it. With ``equal_size`` every shard is
    truncated to the smallest shard size so all d_i are equal.
    """
    K = dataset.n_classes
    c = classes_per_client
    if N < 1:
        raise PartitionError("N must be at least 1")
    if not 1 <= c <= K:
        raise PartitionError(f"classes_per_client must be in [1, {K}]")
    if (N * c) % K:
        raise PartitionError(f"{N} clients x {c} classes cannot be spread evenly over {K} classes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(K)
    shards_per_class = N * c // K
    assignment = [[int(order[(i * c + j) % K]) for j in range(c)] for i in range(N)]

    shards: dict[int, list[np.ndarray]] = {}
    for k in range(K):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) < shards_per_class:
            raise PartitionError(f"class {k} has {len(members)} samples for {shards_per_class} shards")
        shards[k] = list(np.array_split(rng.permutation(members), shards_per_class))
    if equal_size:
        size = min(len(s) for parts in shards.values() for s in parts)
        shards = {k: [s[:size] for s in parts] for k, parts in shards.items()}

    clients = []
    for classes in assignment:
        idx = np.concatenate([shards[k].pop() for k in classes])
        clients.append(dataset.subset(np.sort(idx)))
    return ClientPartition(tuple(clients))


def subsample_partition(partition: ClientPartition, fraction: float, seed: int) -> ClientPartition:
    """Keep ``ceil(fraction * d_i)`` samples of every client."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return partition
    rng = np.random.default_rng(seed)
    out = []
    for ds in partition.client_datasets:
        keep = max(1, math.ceil(fraction * len(ds)))
        out.append(ds.subset(np.sort(rng.choice(len(ds), size=keep, replace=False))))
    return ClientPartition(tuple(out))
