"""Per-client label distributions and their 2-D PCA projection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import ClientShard, Dataset


class EmptyShardError(ValueError):
    pass


def label_histogram(shard: ClientShard, dataset: Dataset) -> np.ndarray:
    """Number of samples of each label held by ``shard`` (length K)."""
    if len(shard) == 0:
        raise EmptyShardError(f"client {shard.client_id} holds no samples")
    return np.bincount(dataset.labels[shard.sample_indices], minlength=dataset.num_classes)


def build_distribution_matrix(shards: Sequence[ClientShard], dataset: Dataset) -> np.ndarray:
    """Row-stochastic N x K matrix; row i is client i's label frequency vector."""
    rows = []
    for shard in shards:
        counts = label_histogram(shard, dataset)
        rows.append(counts / counts.sum())
    return np.vstack(rows)


@dataclass
class Projection:
    coords: np.ndarray  # (N, 2)
    components: np.ndarray  # (2, K), unit rows
    explained_variance: np.ndarray  # (2,)
    rank_deficient: bool


def pca_project(P: np.ndarray, tol: float = 1e-12) -> Projection:
    """Project the rows of ``P`` onto the top two principal axes.

    Each axis is oriented so that its largest-magnitude loading is positive.
    If the covariance has fewer than two eigenvalues above ``tol`` (relative
    to the largest), the missing coordinates are zero and ``rank_deficient``
    is set.
    """
    P = np.asarray(P, dtype=np.float64)
    n, k = P.shape
    if n < 3 or k < 2:
        raise ValueError("PCA needs at least 3 rows and 2 columns")
    centered = P - P.mean(axis=0)
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:2]
    evals, evecs = evals[order], evecs[:, order].T.copy()

    cutoff = tol * max(float(evals[0]), 1.0)
    keep = evals > cutoff
    for j in range(2):
        pivot = np.argmax(np.abs(evecs[j]))
        if evecs[j, pivot] < 0:
            evecs[j] = -evecs[j]
        if not keep[j]:
            evecs[j] = 0.0
    coords = centered @ evecs.T
    return Projection(coords, evecs, np.where(keep, evals, 0.0), bool(not keep.all()))
