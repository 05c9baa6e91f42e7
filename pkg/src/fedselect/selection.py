"""Per-round client selection: one client per cluster, or a uniform random
subset of fixed size.

Randomness comes from named streams derived from the run seed, so a draw
depends only on (seed, purpose, round, ...) and never on call order or
threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .clustering import ClusterModel


class Stream(int, Enum):
    """Spawn-key tags separating the independent random streams of a run."""

    INIT = 0
    SELECT_CLUSTERED = 1
    SELECT_RANDOM = 2
    LOCAL_TRAIN = 3


def make_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(stream), *keys)))


class SelectionMode(str, Enum):
    CLUSTERED = "clustered"
    RANDOM = "random"


@dataclass
class SelectionPlan:
    mode: SelectionMode
    cluster_model: ClusterModel | None = None
    epsilon: float | None = None
    n_fixed: int | None = None

    def __post_init__(self) -> None:
        self.mode = SelectionMode(self.mode)
        if self.mode is SelectionMode.CLUSTERED:
            if self.cluster_model is None:
                raise ValueError("clustered selection needs a cluster model")
        elif (self.epsilon is None) == (self.n_fixed is None):
            raise ValueError("random selection needs exactly one of epsilon or n_fixed")

    @classmethod
    def clustered(cls, model: ClusterModel) -> SelectionPlan:
        return cls(SelectionMode.CLUSTERED, cluster_model=model)

    @classmethod
    def random(cls, *, epsilon: float | None = None, n: int | None = None) -> SelectionPlan:
        return cls(SelectionMode.RANDOM, epsilon=epsilon, n_fixed=n)

    def select(self, n_clients: int, seed: int, round_idx: int) -> np.ndarray:
        if self.mode is SelectionMode.CLUSTERED:
            return select_clustered(self.cluster_model, make_rng(seed, Stream.SELECT_CLUSTERED, round_idx))
        amount = self.epsilon if self.epsilon is not None else self.n_fixed
        return select_random(n_clients, amount, make_rng(seed, Stream.SELECT_RANDOM, round_idx))


def select_clustered(model: ClusterModel, rng: np.random.Generator) -> np.ndarray:
    """Pick one member uniformly from each cluster; returns sorted client ids."""
    picks = []
    for cluster in range(model.n_clusters):
        members = model.members(cluster)
        picks.append(members[rng.integers(len(members))])
    return np.sort(np.array(picks, dtype=np.int64))


def random_count(n_clients: int, amount: float | int) -> int:
    """Clients per round for a fraction (float in (0, 1]) or explicit count (int)."""
    if isinstance(amount, (int, np.integer)) and not isinstance(amount, bool):
        n = int(amount)
        if n < 1:
            raise ValueError("client count must be at least 1")
    else:
        if not 0.0 < amount <= 1.0:
            raise ValueError(f"fraction {amount} outside (0, 1]")
        # the 1e-9 keeps e.g. 0.29 * 100 from flooring to 28
        n = max(math.floor(amount * n_clients + 1e-9), 1)
    if n > n_clients:
        raise ValueError(f"cannot select {n} of {n_clients} clients")
    return n


def select_random(n_clients: int, amount: float | int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement; ``amount`` is a fraction or a count."""
    if n_clients < 1:
        raise ValueError("need at least one client")
    n = random_count(n_clients, amount)
    return np.sort(rng.choice(n_clients, size=n, replace=False))
