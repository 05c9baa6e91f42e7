"""k-medoids (PAM) on a precomputed dissimilarity matrix, plus silhouette
based choice of the number of clusters.

Comparisons between costs and silhouettes use a small relative tolerance so
that two matrices differing only by a positive scale factor (or by the
rounding that comes with it) take exactly the same decisions. Every tie goes
to the lower index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SWAP_ITER = 300
REL_TOL = 1e-9


@dataclass
class ClusterModel:
    medoids: np.ndarray  # sorted client indices; cluster id j has medoid medoids[j]
    assignment: np.ndarray
    cost: float
    silhouette: float = float("nan")

    @property
    def n_clusters(self) -> int:
        return len(self.medoids)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


def _check_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("dissimilarity matrix must be square")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValueError("dissimilarities must be finite and non-negative")
    return D


def silhouette_samples(D, assignment) -> np.ndarray:
    """Per-point silhouette, 0 for members of singleton clusters."""
    D = _check_matrix(D)
    assignment = np.asarray(assignment)
    labels = np.unique(assignment)
    if len(labels) < 2:
        raise ValueError("silhouette needs at least two clusters")
    n = len(assignment)
    # mean distance from every point to every cluster
    sums = np.stack([D[:, assignment == c].sum(axis=1) for c in labels], axis=1)
    sizes = np.array([np.sum(assignment == c) for c in labels])
    own = np.searchsorted(labels, assignment)
    rows = np.arange(n)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own_size > 1, s, 0.0)


def silhouette_mean(D, assignment) -> float:
    """Mean silhouette over all points; raises if fewer than two clusters."""
    return float(np.mean(silhouette_samples(D, assignment)))


def assign_to_medoids(D: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    """Nearest-medoid labels (lowest cluster id on ties); medoids keep their own."""
    assignment = np.argmin(D[:, medoids], axis=1)
    assignment[medoids] = np.arange(len(medoids))
    return assignment


def medoid_cost(D: np.ndarray, medoids) -> float:
    medoids = np.asarray(medoids)
    return float(D[:, medoids].min(axis=1).sum())


def _build(D: np.ndarray, c: int, tol: float) -> list[int]:
    n = len(D)
    totals = D.sum(axis=1)
    first = int(np.flatnonzero(totals <= totals.min() + tol)[0])
    medoids = [first]
    nearest = D[:, first].copy()
    for _ in range(1, c):
        # gain of adding candidate h: total reduction of nearest-medoid distance
        gains = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        best = np.max(gains)
        pick = int(np.flatnonzero(gains >= best - tol)[0])
        medoids.append(pick)
        nearest = np.minimum(nearest, D[:, pick])
    return medoids


def _best_swap(D: np.ndarray, medoids: list[int], tol: float) -> tuple[float, int, int]:
    """Most negative cost change over all (medoid slot, non-medoid) swaps."""
    n = len(D)
    med = np.array(medoids)
    to_med = D[:, med]
    order = np.argsort(to_med, axis=1, kind="stable")
    nearest_slot = order[:, 0]
    rows = np.arange(n)
    d_near = to_med[rows, nearest_slot]
    d_second = to_med[rows, order[:, 1]] if len(med) > 1 else np.full(n, np.inf)
    candidates = np.setdiff1d(np.arange(n), med)
    Dh = D[:, candidates]  # (n, H)

    best = (0.0, -1, -1)
    for slot in range(len(med)):
        owned = nearest_slot == slot
        # points owned by this medoid fall back to min(second, new); others to min(near, new)
        fallback = np.where(owned, d_second, d_near)
        delta = (np.minimum(fallback[:, None], Dh) - d_near[:, None]).sum(axis=0)
        h = int(np.argmin(delta))
        min_delta = delta[h]
        h = int(np.flatnonzero(delta <= min_delta + tol)[0])
        if delta[h] < best[0] - tol:
            best = (float(delta[h]), slot, int(candidates[h]))
    return best


def kmedoids(D, c: int, seed: int = 0) -> ClusterModel:
    """PAM clustering: greedy BUILD, then SWAP until no swap lowers the cost.

    The algorithm is deterministic; ``seed`` is accepted for interface
    symmetry with the rest of the pipeline and does not alter the result.
    """
    D = _check_matrix(D)
    n = len(D)
    if not 2 <= c <= n - 1:
        raise ValueError(f"cluster count {c} outside [2, {n - 1}]")
    scale = float(D.sum()) / max(n, 1)
    tol = REL_TOL * scale if scale > 0 else 0.0

    medoids = sorted(_build(D, c, tol))
    for _ in range(MAX_SWAP_ITER):
        delta, slot, h = _best_swap(D, medoids, tol)
        if slot < 0:
            break
        medoids[slot] = h
        medoids.sort()

    med = np.array(sorted(medoids))
    assignment = assign_to_medoids(D, med)
    cost = float(D[np.arange(n), med[assignment]].sum())
    return ClusterModel(med, assignment, cost)


def select_cluster_count(D, c_max: int | None = None, seed: int = 0) -> ClusterModel:
    """Run k-medoids for c = 2..c_max and keep the best mean silhouette.

    ``c_max`` defaults to N - 1. Silhouettes within a relative 1e-9 of the
    best count as tied, and ties go to the smallest c.
    """
    D = _check_matrix(D)
    n = len(D)
    if n < 4:
        raise ValueError("need at least 4 clients to choose a cluster count")
    c_max = n - 1 if c_max is None else c_max
    if not 2 <= c_max <= n - 1:
        raise ValueError(f"c_max {c_max} outside [2, {n - 1}]")

    models = []
    for c in range(2, c_max + 1):
        model = kmedoids(D, c, seed)
        model.silhouette = silhouette_mean(D, model.assignment)
        models.append(model)
    best = max(m.silhouette for m in models)
    slack = REL_TOL * max(abs(best), 1e-300)
    return next(m for m in models if m.silhouette >= best - slack)
