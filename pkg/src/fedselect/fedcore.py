"""Local SGD, FedAvg aggregation and the convergence-monitored training loop."""

from __future__ import annotations

import csv
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import ClientShard, Dataset
from .energy import EnergyLedger, InjectedTiming, PowerModel, WallClockTiming, clock
from .models import Model, build_model
from .selection import SelectionPlan, Stream, make_rng

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Local training produced a non-finite loss."""


class FederatedRunError(RuntimeError):
    """Any failure inside a round, tagged with round and client."""


@dataclass(frozen=True)
class HyperParams:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    model_arch: str = "mlp"
    hidden: int = 32
    accuracy_threshold: float = 0.97
    patience: int = 3
    max_rounds: int = 500

    def __post_init__(self) -> None:
        if self.local_epochs < 1 or self.batch_size < 1 or self.patience < 1 or self.hidden < 1:
            raise ValueError("local_epochs, batch_size, hidden and patience must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")
        if not 0.0 < self.accuracy_threshold < 1.0:
            raise ValueError("accuracy_threshold must lie in (0, 1)")
        if self.model_arch not in ("linear", "mlp", "cnn"):
            raise ValueError(f"unknown model architecture {self.model_arch!r}")

    def model_for(self, dataset: Dataset) -> Model:
        return build_model(self.model_arch, dataset.dim, dataset.num_classes,
                           hidden=self.hidden, image_shape=dataset.image_shape)


def local_train(
    w: np.ndarray,
    shard: ClientShard,
    dataset: Dataset,
    h: HyperParams,
    rng: np.random.Generator,
    *,
    model: Model | None = None,
    timing: InjectedTiming | WallClockTiming | None = None,
) -> tuple[np.ndarray, float, int]:
    """Mini-batch SGD on one client's shard, starting from ``w``.

    The shard is reshuffled from ``rng`` at the start of every epoch.
    Returns the new parameters, the training time reported by ``timing``
    (injected cost model by default) and the shard size.
    """
    if len(shard) == 0:
        raise ValueError(f"client {shard.client_id} has an empty shard")
    model = model or h.model_for(dataset)
    if w.shape != (model.size,):
        raise ValueError(f"parameter vector has shape {w.shape}, model expects ({model.size},)")
    timing = timing or InjectedTiming()

    start = clock()
    w = w.copy()
    idx = shard.sample_indices
    for epoch in range(h.local_epochs):
        order = idx[rng.permutation(len(idx))]
        for lo in range(0, len(order), h.batch_size):
            batch = order[lo:lo + h.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = model.loss_and_grad(w, dataset.features[batch], dataset.labels[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"client {shard.client_id}: non-finite loss in epoch {epoch}")
            w -= h.learning_rate * grad
    elapsed = clock() - start
    return w, timing.seconds(len(idx), h.local_epochs, elapsed), len(idx)


def aggregate(updates: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Sample-size weighted average of client parameter vectors.

    Computed as an offset from the first update so that averaging identical
    vectors returns that vector bit-for-bit.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    shape = updates[0][0].shape
    if any(w.shape != shape for w, _ in updates):
        raise ValueError("client parameter shapes differ")
    total = sum(n for _, n in updates)
    if total <= 0:
        raise ValueError("total sample count must be positive")
    ref = updates[0][0]
    out = ref.copy()
    for w, n in updates[1:]:
        out += (n / total) * (w - ref)
    return out


def evaluate(model: Model, w: np.ndarray, testset: Dataset) -> float:
    """Top-1 accuracy."""
    return float(np.mean(model.predict(w, testset.features) == testset.labels))


@dataclass(frozen=True)
class Convergence:
    converged: bool
    rounds: int
    std_window: float


def check_convergence(history: Sequence[float], h: HyperParams) -> Convergence:
    """First round closing ``patience`` consecutive rounds at/above threshold.

    ``std_window`` is the population std of the accuracies in that window
    (exact rational arithmetic, so a constant window gives exactly 0);
    for a run that never converges it covers the last ``patience`` rounds.
    """
    acc = np.asarray(history, dtype=np.float64)
    if len(acc) == 0:
        return Convergence(False, 0, float("nan"))
    streak = 0
    for t, a in enumerate(acc, start=1):
        streak = streak + 1 if a >= h.accuracy_threshold else 0
        if streak >= h.patience:
            return Convergence(True, t, statistics.pstdev(acc.tolist()[t - h.patience:t]))
    return Convergence(False, len(acc), statistics.pstdev(acc.tolist()[-h.patience:]))


@dataclass
class RoundLog:
    round: int
    selected: list[int]
    sample_counts: list[int]
    train_seconds: list[float]
    energy_wh: float
    accuracy: float


@dataclass
class RunRecord:
    initial_accuracy: float
    rounds: list[RoundLog] = field(default_factory=list)
    converged: bool = False
    rounds_to_converge: int = 0
    accuracy_std_window: float = float("nan")
    ledger: EnergyLedger = field(default_factory=EnergyLedger)

    @property
    def total_energy_wh(self) -> float:
        return self.ledger.total_wh

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.rounds]

    @property
    def final_accuracy(self) -> float:
        return self.rounds[-1].accuracy if self.rounds else self.initial_accuracy

    @property
    def mean_clients_per_round(self) -> float:
        if not self.rounds:
            return 0.0
        return float(np.mean([len(r.selected) for r in self.rounds]))

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "rounds_to_converge": self.rounds_to_converge,
            "accuracy_std_window": self.accuracy_std_window,
            "initial_accuracy": self.initial_accuracy,
            "final_accuracy": self.final_accuracy,
            "mean_clients_per_round": self.mean_clients_per_round,
            "total_energy_wh": self.total_energy_wh,
        }


ROUND_FIELDS = ["round", "selected", "sample_counts", "train_seconds", "energy_wh", "accuracy"]


def _join(values) -> str:
    return ";".join(repr(v) for v in values)


def write_rounds_csv(path: str | Path, rounds: Sequence[RoundLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUND_FIELDS)
        for r in rounds:
            writer.writerow([r.round, _join(r.selected), _join(r.sample_counts),
                             _join(r.train_seconds), repr(r.energy_wh), repr(r.accuracy)])


def read_rounds_csv(path: str | Path) -> list[RoundLog]:
    def split(s, cast):
        return [cast(v) for v in s.split(";")] if s else []

    with open(path, newline="") as fh:
        return [
            RoundLog(int(row["round"]), split(row["selected"], int), split(row["sample_counts"], int),
                     split(row["train_seconds"], float), float(row["energy_wh"]), float(row["accuracy"]))
            for row in csv.DictReader(fh)
        ]


@dataclass
class FedConfig:
    train: Dataset
    test: Dataset
    shards: list[ClientShard]
    plan: SelectionPlan
    hyper: HyperParams = field(default_factory=HyperParams)
    power: PowerModel = field(default_factory=PowerModel)
    timing: InjectedTiming | WallClockTiming = field(default_factory=InjectedTiming)
    seed: int = 0
    workers: int = 1


def init_params(model: Model, seed: int) -> np.ndarray:
    return model.init(make_rng(seed, Stream.INIT))


def run_federated(cfg: FedConfig, trace: list[np.ndarray] | None = None) -> RunRecord:
    """FedAvg with the configured client selection until convergence or
    ``max_rounds``.

    If ``trace`` is given, the initial and every aggregated global parameter
    vector is appended to it.

    Every client's local run draws from a stream keyed by (seed, round,
    client), so the record is a pure function of the config under injected
    timing, whatever ``workers`` is.
    """
    h = cfg.hyper
    model = h.model_for(cfg.train)
    w = init_params(model, cfg.seed)
    record = RunRecord(initial_accuracy=evaluate(model, w, cfg.test))
    if trace is not None:
        trace.append(w.copy())
    n_clients = len(cfg.shards)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def train_one(t: int, cid: int, w_global: np.ndarray):
        try:
            return local_train(w_global, cfg.shards[cid], cfg.train, h,
                               make_rng(cfg.seed, Stream.LOCAL_TRAIN, t, cid),
                               model=model, timing=cfg.timing)
        except Exception as exc:
            raise FederatedRunError(f"round {t}, client {cid}: {exc}") from exc

    try:
        for t in range(1, h.max_rounds + 1):
            try:
                selected = [int(c) for c in cfg.plan.select(n_clients, cfg.seed, t)]
            except Exception as exc:
                raise FederatedRunError(f"round {t}, selection: {exc}") from exc
            jobs = [(t, cid, w) for cid in selected]
            results = list(pool.map(lambda a: train_one(*a), jobs)) if pool else [train_one(*a) for a in jobs]

            round_wh = 0.0
            for cid, (_, seconds, _) in zip(selected, results):
                round_wh += record.ledger.record(cid, cfg.power.for_client(cid), seconds, round_idx=t)
            w = aggregate([(w_i, n_i) for w_i, _, n_i in results])
            if trace is not None:
                trace.append(w.copy())
            acc = evaluate(model, w, cfg.test)
            record.rounds.append(RoundLog(t, selected, [r[2] for r in results],
                                          [r[1] for r in results], round_wh, acc))
            conv = check_convergence(record.accuracies, h)
            if conv.converged:
                break
    finally:
        if pool:
            pool.shutdown()

    conv = check_convergence(record.accuracies, h)
    record.converged = conv.converged
    record.rounds_to_converge = conv.rounds
    record.accuracy_std_window = conv.std_window
    logger.debug("run seed=%d: %s after %d rounds, %.3f Wh", cfg.seed,
                 "converged" if conv.converged else "not converged", conv.rounds, record.total_energy_wh)
    return record
