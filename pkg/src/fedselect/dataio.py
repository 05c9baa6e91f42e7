"""Dataset loading, synthesis and non-iid client partitioning.

Datasets live in memory as a float feature matrix plus integer labels.
Clients never copy samples; a :class:`ClientShard` only holds indices into
the shared dataset.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
PIXEL_SCALE = 255.0  # u8 pixels are divided by this to land in [0, 1]


class IdxError(ValueError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class PartitionError(RuntimeError):
    pass


@dataclass
class Dataset:
    """Labeled samples with ``num_classes`` classes.

    ``image_shape`` is set when the features are flattened images, which is
    what the ``cnn`` model needs to unflatten them again.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array (samples x dim)")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError("features and labels must have equal length")
        if len(self.labels) == 0:
            raise ValueError("dataset must contain at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes - 1}]")
        present = np.bincount(self.labels, minlength=self.num_classes)
        if np.any(present == 0):
            missing = np.flatnonzero(present == 0).tolist()
            raise ValueError(f"labels {missing} never occur in the dataset")
        if self.image_shape is not None:
            rows, cols = self.image_shape
            if rows * cols != self.features.shape[1]:
                raise ValueError("image_shape does not match the feature dimension")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        """Return the samples at ``indices`` as a new dataset (same K)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.image_shape)


@dataclass(eq=False)
class ClientShard:
    client_id: int
    sample_indices: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.sample_indices = np.asarray(self.sample_indices, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.sample_indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClientShard):
            return NotImplemented
        return self.client_id == other.client_id and np.array_equal(
            self.sample_indices, other.sample_indices
        )


# --------------------------------------------------------------------------
# IDX files
# --------------------------------------------------------------------------

def _read_idx(path: str | Path, expected_magic: int, ndims: int) -> tuple[tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    header_len = 4 + 4 * ndims
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic number {magic}, expected {expected_magic}")
    if len(data) < header_len:
        raise IdxTruncatedError(f"{path}: header truncated ({len(data)} bytes)")
    dims = struct.unpack(f">{ndims}I", data[4:header_len])
    n_payload = int(np.prod(dims, dtype=np.int64))
    payload = data[header_len:]
    if len(payload) < n_payload:
        raise IdxTruncatedError(
            f"{path}: payload truncated, {len(payload)} of {n_payload} bytes present"
        )
    return dims, payload[:n_payload]


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an IDX image/label file pair (the MNIST distribution format).

    Pixels are scaled to [0, 1]; the label count K is ``max(label) + 1``.

    Raises:
        IdxMagicError: a file does not start with the expected magic number.
        IdxTruncatedError: a header or payload is shorter than declared.
        IdxCountMismatchError: image and label counts differ.
    """
    (n_images, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_images != n_labels:
        raise IdxCountMismatchError(
            f"{images_path} holds {n_images} images but {labels_path} holds {n_labels} labels"
        )
    features = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(
        features.astype(np.float64) / PIXEL_SCALE,
        labels,
        int(labels.max()) + 1,
        image_shape=(rows, cols),
    )


def write_idx(images_path: str | Path, labels_path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write u8 ``images`` (n, rows, cols) and ``labels`` (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    )
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

def generate_synthetic(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class.

    Class means are standard-normal draws; samples add ``spread`` times
    standard-normal noise. Samples are ordered class by class.
    """
    if num_classes < 2 or dim < 2 or samples_per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 2 and samples_per_class >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim))
    noise = rng.standard_normal((num_classes, samples_per_class, dim))
    features = (means[:, None, :] + spread * noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    return Dataset(features, labels, num_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; each class keeps at least one sample on both sides."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) < 2:
            raise ValueError(f"class {k} has fewer than two samples, cannot split")
        idx = rng.permutation(idx)
        n_test = min(max(int(round(test_fraction * len(idx))), 1), len(idx) - 1)
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return (
        dataset.subset(np.sort(np.concatenate(train_idx))),
        dataset.subset(np.sort(np.concatenate(test_idx))),
    )


def sample_subset(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Uniform random subset of ``size`` samples, kept in original order."""
    if size >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    return dataset.subset(np.sort(rng.choice(len(dataset), size=size, replace=False)))


# --------------------------------------------------------------------------
# Dirichlet label-skew partitioning
# --------------------------------------------------------------------------

def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps the lower client index first among equal remainders
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _dirichlet_draw(labels: np.ndarray, num_classes: int, n_clients: int, beta: float, rng) -> list[list[np.ndarray]]:
    pieces: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for k in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == k))
        props = rng.dirichlet(np.full(n_clients, beta))
        if not np.all(np.isfinite(props)) or props.sum() <= 0:
            # degenerate draw at tiny beta: hand the whole label to one client
            props = np.zeros(n_clients)
            props[rng.integers(n_clients)] = 1.0
        props = props / props.sum()
        counts = _largest_remainder(props, len(idx))
        for client, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            if len(chunk):
                pieces[client].append(chunk)
    return pieces


def partition_dirichlet(
    dataset: Dataset,
    n_clients: int,
    beta: float,
    seed: int,
    max_retries: int = 10,
) -> list[ClientShard]:
    """Split ``dataset`` over ``n_clients`` with per-label Dirichlet(beta) skew.

    Each label's samples are shuffled and dealt out according to one
    Dirichlet draw over clients, with largest-remainder rounding. A draw that
    leaves a client empty is repeated with the next sub-seed, up to
    ``max_retries`` times; after that, empty clients are filled by moving one
    sample at a time out of the currently largest shard.
    """
    if n_clients < 2:
        raise ValueError("n_clients must be at least 2")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if len(dataset) < n_clients:
        raise ValueError(f"{len(dataset)} samples cannot cover {n_clients} clients")

    for attempt in range(max_retries + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        pieces = _dirichlet_draw(dataset.labels, dataset.num_classes, n_clients, beta, rng)
        shards = [
            np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64) for p in pieces
        ]
        if all(len(s) for s in shards):
            break
    else:
        n_empty = sum(1 for s in shards if len(s) == 0)
        logger.debug("partition seed %d: %d empty clients after %d retries, topping up",
                     seed, n_empty, max_retries)
        shards = _top_up(shards)

    return [ClientShard(i, s) for i, s in enumerate(shards)]


def _top_up(shards: list[np.ndarray]) -> list[np.ndarray]:
    shards = list(shards)
    for client in range(len(shards)):
        if len(shards[client]):
            continue
        sizes = [len(s) for s in shards]
        donor = int(np.argmax(sizes))
        if sizes[donor] < 2:
            raise PartitionError("cannot top up empty clients: no shard has a spare sample")
        shards[client] = shards[donor][-1:]
        shards[donor] = shards[donor][:-1]
    return shards
