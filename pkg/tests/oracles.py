"""Slow, obviously-correct reference implementations used by the tests."""

import itertools

import mpmath
import numpy as np
from scipy.optimize import linprog


def brute_force_medoids(D, c):
    """Minimum total cost over every medoid set of size c."""
    n = len(D)
    best_cost, best_set = np.inf, None
    for combo in itertools.combinations(range(n), c):
        cost = sum(min(D[i][m] for m in combo) for i in range(n))
        if cost < best_cost:
            best_cost, best_set = cost, combo
    return best_cost, best_set


def silhouette_loop(D, assignment):
    """Per-point loops straight from the silhouette definition."""
    n = len(assignment)
    labels = sorted(set(int(a) for a in assignment))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if assignment[j] == assignment[i] and j != i]
        if not own:
            continue  # singleton contributes 0
        a = sum(D[i][j] for j in own) / len(own)
        b = min(
            sum(D[i][j] for j in range(n) if assignment[j] == lab) / sum(1 for j in range(n) if assignment[j] == lab)
            for lab in labels if lab != assignment[i]
        )
        m = max(a, b)
        total += 0.0 if m == 0 else (b - a) / m
    return total / n


def random_dissimilarity(rng, n, dim=3):
    X = rng.random((n, dim))
    return np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))


def transport_lp(p, q):
    """Earth mover's distance on support 0..K-1 by solving the transport LP."""
    k = len(p)
    cost = np.abs(np.subtract.outer(np.arange(k), np.arange(k))).ravel()
    a_eq, b_eq = [], []
    for i in range(k):
        row = np.zeros((k, k))
        row[i, :] = 1
        a_eq.append(row.ravel())
        b_eq.append(p[i])
    for j in range(k):
        col = np.zeros((k, k))
        col[:, j] = 1
        a_eq.append(col.ravel())
        b_eq.append(q[j])
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=b_eq, bounds=(0, None), method="highs")
    return res.fun


def kl_mp(p, q):
    mpmath.mp.dps = 50
    return sum(mpmath.mpf(a) * mpmath.log(mpmath.mpf(a) / mpmath.mpf(b)) for a, b in zip(p, q) if a > 0)
