"""Synthetic datasets and client partitioning.

Two generators (linearly separable points, Gaussian blobs) and four
partition schemes (iid, label shards, Dirichlet, cluster-flip) cover the
data-heterogeneity regimes the round engine is exercised against:
balanced IID shares, pathological label skew, tunable non-IID mixes, and
groups whose label semantics disagree with each other.

Everything is seeded and reproducible: the same spec yields bitwise
identical arrays on one platform.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyPartitionError

_MARGIN = 0.1
_BLOB_SIGMA = 0.5
_BLOB_RADIUS = 3.0

PARTITION_SCHEMES = ("iid", "label_shard", "dirichlet", "cluster_flip")
GENERATOR_KINDS = ("linear", "blobs")


@dataclass(frozen=True)
class Dataset:
    """An in-memory labelled dataset.

    features: float64 array of shape (n, input_dim)
    labels:   int64 array of shape (n,), class indices starting at 0
    """

    features: np.ndarray
    labels: np.ndarray
    source_tag: str = ""

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ConfigError("features must be a 2-d array")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ConfigError("labels must be 1-d and aligned with features")
        if labs.size and labs.min() < 0:
            raise ConfigError("labels must be non-negative class indices")
        if not np.isfinite(feats).all():
            raise ConfigError("features must be finite")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        """Inferred class count; assumes labels are dense 0..C-1."""
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, indices: np.ndarray, tag: str = "") -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], tag or self.source_tag)


@dataclass(frozen=True)
class GenerationSpec:
    """Everything needed to rebuild one synthetic dataset from scratch."""

    kind: str
    num_samples: int
    input_dim: int
    num_classes: int
    seed: int

    def build(self) -> Dataset:
        return generate_synthetic(
            self.kind, self.num_samples, self.input_dim, self.num_classes, self.seed
        )


@dataclass(frozen=True)
class PartitionSpec:
    """How to split one dataset across clients.

    Scheme-specific parameters must be present exactly when the scheme
    uses them:

    - iid:          no extra parameters
    - label_shard:  shards_per_client
    - dirichlet:    alpha
    - cluster_flip: num_clusters
    """

    scheme: str
    num_clients: int
    seed: int
    alpha: float | None = None
    shards_per_client: int | None = None
    num_clusters: int | None = None

    def __post_init__(self) -> None:
        if self.scheme not in PARTITION_SCHEMES:
            raise ConfigError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        required = {
            "iid": (),
            "label_shard": ("shards_per_client",),
            "dirichlet": ("alpha",),
            "cluster_flip": ("num_clusters",),
        }[self.scheme]
        for name in ("alpha", "shards_per_client", "num_clusters"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ConfigError(f"scheme {self.scheme!r} requires {name}")
            if name not in required and value is not None:
                raise ConfigError(f"scheme {self.scheme!r} does not accept {name}")
        if self.scheme == "dirichlet" and self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.scheme == "label_shard" and self.shards_per_client is not None and self.shards_per_client < 1:
            raise ConfigError("shards_per_client must be >= 1")
        if self.scheme == "cluster_flip" and self.num_clusters is not None and self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")


def generate_synthetic(
    kind: str,
    num_samples: int,
    input_dim: int,
    num_classes: int,
    seed: int,
) -> Dataset:
    """Generate a labelled dataset.

    linear: points with a hidden unit-norm separating hyperplane; every
    point keeps margin >= 0.1 from the plane (violators are redrawn), and
    num_classes must be 2.

    blobs: one Gaussian cluster per class (sigma 0.5) with means placed on
    a scaled regular simplex; per-class counts are balanced, remainder
    going to the lowest class indices.
    """
    if kind not in GENERATOR_KINDS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if num_samples < num_classes:
        raise ConfigError("num_samples must be >= num_classes")
    rng = np.random.default_rng(seed & (2**64 - 1))
    if kind == "linear":
        if num_classes != 2:
            raise ConfigError("linear generator is binary: num_classes must be 2")
        normal = rng.normal(size=input_dim)
        normal /= np.linalg.norm(normal)
        feats = rng.normal(size=(num_samples, input_dim))
        while True:
            margins = feats @ normal
            bad = np.flatnonzero(np.abs(margins) < _MARGIN)
            if bad.size == 0:
                break
            feats[bad] = rng.normal(size=(bad.size, input_dim))
        labels = (feats @ normal > 0).astype(np.int64)
        return Dataset(feats, labels, f"linear:{seed}")
    # blobs
    means = _simplex_means(num_classes, input_dim)
    base = num_samples // num_classes
    remainder = num_samples % num_classes
    feats_parts: list[np.ndarray] = []
    label_parts: list[np.ndarray] = []
    for cls in range(num_classes):
        count = base + (1 if cls < remainder else 0)
        feats_parts.append(rng.normal(loc=means[cls], scale=_BLOB_SIGMA, size=(count, input_dim)))
        label_parts.append(np.full(count, cls, dtype=np.int64))
    return Dataset(np.concatenate(feats_parts), np.concatenate(label_parts), f"blobs:{seed}")


def _simplex_means(num_classes: int, input_dim: int) -> np.ndarray:
    """Vertices of a regular simplex with num_classes points in input_dim dims.

    A regular simplex with k vertices needs k-1 dimensions.
    """
    k = num_classes
    if input_dim < k - 1:
        raise ConfigError(f"blobs with {k} classes need input_dim >= {k - 1}")
    centered = np.eye(k) - np.full((k, k), 1.0 / k)
    # Rows span a (k-1)-dimensional subspace; express them in it.
    u, s, _ = np.linalg.svd(centered)
    coords = u[:, : k - 1] * s[: k - 1]
    coords *= _BLOB_RADIUS / np.linalg.norm(coords[0])
    means = np.zeros((k, input_dim))
    means[:, : k - 1] = coords
    return means


def partition_dataset(data: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split a dataset into per-client shares.

    Every scheme covers all input samples exactly once and never returns
    an empty share (Dirichlet shares are repaired by moving one sample
    from the largest partition).  cluster_flip additionally remaps labels
    within each cluster group, so its shares preserve the feature multiset
    but not the label multiset.
    """
    n = len(data)
    if n < spec.num_clients:
        raise EmptyPartitionError(
            f"cannot split {n} samples across {spec.num_clients} clients"
        )
    rng = np.random.default_rng(spec.seed & (2**64 - 1))
    if spec.scheme == "iid":
        parts = np.array_split(rng.permutation(n), spec.num_clients)
    elif spec.scheme == "label_shard":
        assert spec.shards_per_client is not None
        num_shards = spec.num_clients * spec.shards_per_client
        if n < num_shards:
            raise EmptyPartitionError(f"{n} samples cannot fill {num_shards} shards")
        by_label = np.argsort(data.labels, kind="stable")
        shards = np.array_split(by_label, num_shards)
        deal = rng.permutation(num_shards)
        parts = [
            np.concatenate([shards[deal[i * spec.shards_per_client + j]]
                            for j in range(spec.shards_per_client)])
            for i in range(spec.num_clients)
        ]
    elif spec.scheme == "dirichlet":
        assert spec.alpha is not None
        buckets: list[list[np.ndarray]] = [[] for _ in range(spec.num_clients)]
        for cls in range(data.num_classes):
            idx = np.flatnonzero(data.labels == cls)
            idx = idx[rng.permutation(idx.size)]
            props = rng.dirichlet(np.full(spec.num_clients, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for client, chunk in enumerate(np.split(idx, cuts)):
                buckets[client].append(chunk)
        parts = [
            np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
            for chunks in buckets
        ]
        _repair_empty(parts)
    else:  # cluster_flip
        parts = np.array_split(rng.permutation(n), spec.num_clients)
    out: list[Dataset] = []
    for i, idx in enumerate(parts):
        if idx.size == 0:
            raise EmptyPartitionError(f"partition {i} is empty")
        share = data.subset(np.sort(idx), f"{data.source_tag}/part{i}")
        if spec.scheme == "cluster_flip":
            assert spec.num_clusters is not None
            group = i % spec.num_clusters
            flipped = (share.labels + group) % data.num_classes
            share = Dataset(share.features, flipped, share.source_tag + f"/flip{group}")
        out.append(share)
    return out


def _repair_empty(parts: list[np.ndarray]) -> None:
    """Move one sample from the largest share into each empty one.

    Deterministic: empties are fixed in ascending client order and the
    donor is the largest share with ties broken by lowest index.
    """
    for i in range(len(parts)):
        if parts[i].size:
            continue
        sizes = [p.size for p in parts]
        donor = max(range(len(parts)), key=lambda j: (sizes[j], -j))
        if parts[donor].size <= 1:
            raise EmptyPartitionError("not enough samples to repair empty partitions")
        parts[i] = parts[donor][:1]
        parts[donor] = parts[donor][1:]


def train_test_split(data: Dataset, seed: int, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the test share gets floor(test_fraction * n)."""
    n = len(data)
    test_n = int(test_fraction * n)
    perm = np.random.default_rng(seed & (2**64 - 1)).permutation(n)
    test = data.subset(np.sort(perm[:test_n]), data.source_tag + "/test")
    train = data.subset(np.sort(perm[test_n:]), data.source_tag + "/train")
    return train, test


def dump_csv(data: Dataset, path: Path | str) -> None:
    """Write rows `label,f0,f1,...` with a header; floats keep full precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(data.input_dim)])
        for label, row in zip(data.labels, data.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path: Path | str, source_tag: str = "") -> Dataset:
    """Inverse of dump_csv; round-trips arrays bitwise."""
    path = Path(path)
    labels: list[int] = []
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise ConfigError(f"{path} is not a dataset csv")
        for row in reader:
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ConfigError(f"{path} holds no samples")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64),
                   source_tag or str(path))
