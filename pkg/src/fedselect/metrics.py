"""Dissimilarity measures between label probability vectors.

Every measure is oriented so that 0 means "identical distributions", which
is what k-medoids and the silhouette expect. Logarithms are natural.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

KL_SMOOTHING = 1e-12
PROB_ATOL = 1e-9


class MetricId(str, Enum):
    COSINE = "cosine"
    MSE = "mse"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    CHEBYSHEV = "chebyshev"
    MMD = "mmd"
    KL = "kl"
    JSD = "jsd"
    WASSERSTEIN1 = "wasserstein1"
    RANDOM = "random"

    @classmethod
    def parse(cls, name: str | MetricId) -> MetricId:
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown metric {name!r}; expected one of: {valid}") from None


# Every selectable similarity measure, in the order they are reported.
SIMILARITY_METRICS = tuple(m for m in MetricId if m is not MetricId.RANDOM)


class MetricError(ValueError):
    pass


class LengthMismatchError(MetricError):
    pass


class NotAProbabilityError(MetricError):
    pass


class NotComputableError(MetricError):
    """Raised for ``random``, which is a selection mode rather than a measure."""


def _check_prob(v: np.ndarray, name: str) -> None:
    if v.ndim != 1 or len(v) < 2:
        raise NotAProbabilityError(f"{name} must be a vector with at least 2 entries")
    # NaN fails both comparisons and +inf fails the sum test
    if not (v.min() >= 0.0 and abs(v.sum() - 1.0) <= PROB_ATOL):
        raise NotAProbabilityError(f"{name} is not a probability vector")


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _cosine(p, q):
    return 1.0 - float(p @ q) / (np.linalg.norm(p) * np.linalg.norm(q))


def _mse(p, q):
    diff = p - q
    return float(diff @ diff) / len(p)


def _euclidean(p, q):
    return float(np.linalg.norm(p - q))


def _manhattan(p, q):
    return float(np.abs(p - q).sum())


def _chebyshev(p, q):
    return float(np.abs(p - q).max())


def _mmd(p, q):
    # linear kernel: <p,p> - 2<p,q> + <q,q> == ||p - q||^2
    diff = p - q
    return float(diff @ diff)


def _kl_symmetric(p, q):
    k = len(p)
    ps = (p + KL_SMOOTHING) / (1.0 + k * KL_SMOOTHING)
    qs = (q + KL_SMOOTHING) / (1.0 + k * KL_SMOOTHING)
    return 0.5 * (_kl(ps, qs) + _kl(qs, ps))


def _jsd(p, q):
    mid = 0.5 * (p + q)
    return 0.5 * (_kl(p, mid) + _kl(q, mid))


def _wasserstein1(p, q):
    # labels sit on 0, 1, ..., K-1; W1 is the L1 distance between CDFs
    return float(np.abs(np.cumsum(p - q)[:-1]).sum())


_IMPL = {
    MetricId.COSINE: _cosine,
    MetricId.MSE: _mse,
    MetricId.EUCLIDEAN: _euclidean,
    MetricId.MANHATTAN: _manhattan,
    MetricId.CHEBYSHEV: _chebyshev,
    MetricId.MMD: _mmd,
    MetricId.KL: _kl_symmetric,
    MetricId.JSD: _jsd,
    MetricId.WASSERSTEIN1: _wasserstein1,
}


def compute_metric(metric: MetricId | str, p, q) -> float:
    """Dissimilarity between probability vectors ``p`` and ``q``.

    Raises:
        NotComputableError: ``metric`` is ``random``.
        LengthMismatchError: the vectors differ in length.
        NotAProbabilityError: an input is negative, non-finite, or does not
            sum to 1 within 1e-9.
    """
    metric = MetricId.parse(metric)
    if metric is MetricId.RANDOM:
        raise NotComputableError("'random' is a selection mode, not a dissimilarity")
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatchError(f"vector lengths differ: {p.shape} vs {q.shape}")
    _check_prob(p, "p")
    _check_prob(q, "q")
    # rounding can leave values like -1e-17 (cosine, cumsum); clamp to the true floor
    return max(_IMPL[metric](p, q), 0.0)


def pairwise_dissimilarity(P: np.ndarray, metric: MetricId | str) -> np.ndarray:
    """Symmetric N x N matrix of ``compute_metric`` over the rows of ``P``.

    Only the upper triangle is evaluated and mirrored, so symmetry is exact
    and the diagonal is exactly zero.
    """
    metric = MetricId.parse(metric)
    if metric is MetricId.RANDOM:
        raise NotComputableError("'random' is a selection mode, not a dissimilarity")
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or len(P) < 3:
        raise ValueError("need a matrix with at least 3 rows")
    for i, row in enumerate(P):
        _check_prob(row, f"row {i}")
    impl = _IMPL[metric]
    n = len(P)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = max(impl(P[i], P[j]), 0.0)
    return D
