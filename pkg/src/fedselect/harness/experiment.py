"""Seed sweeps over selection strategies, comparison tables and exports.

Output files (all under ``output_dir``):

    table.csv                     one row per strategy, means over seeds
    savings.csv                   each metric vs its matched random baseline
    rounds_<strategy>_<seed>.csv  per-round log of one run
    energy_<strategy>_<seed>.csv  energy ledger of one run
    clusters_<metric>.csv         seed, client_id, cluster_id, is_medoid
    pca_<metric>.csv              seed, client_id, pc1, pc2, cluster_id
    summary.json                  config echo, table, savings, failures
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..clustering import ClusterModel, select_cluster_count
from ..dataio import ClientShard, Dataset, partition_dirichlet
from ..distmatrix import Projection, build_distribution_matrix, pca_project
from ..energy import write_ledger_csv
from ..fedcore import FedConfig, RunRecord, run_federated, write_rounds_csv
from ..metrics import pairwise_dissimilarity
from ..selection import SelectionPlan, random_count
from .config import MATCHED, ExperimentConfig

logger = logging.getLogger(__name__)

CLUSTERED = "clustered"
RANDOM = "random"


@dataclass
class SeedContext:
    """Everything derived from one seed before training starts."""

    seed: int
    shards: list[ClientShard]
    label_matrix: np.ndarray
    projection: Projection
    dissimilarity: dict[str, np.ndarray] = field(default_factory=dict)
    clusters: dict[str, ClusterModel] = field(default_factory=dict)


@dataclass(frozen=True)
class Strategy:
    name: str
    kind: str  # CLUSTERED or RANDOM
    metric: str | None = None
    n: int | None = None
    epsilon: float | None = None

    @classmethod
    def clustered(cls, metric: str) -> Strategy:
        return cls(metric, CLUSTERED, metric=metric)

    @classmethod
    def random_n(cls, n: int) -> Strategy:
        return cls(f"random_n{n}", RANDOM, n=n)

    @classmethod
    def random_eps(cls, eps: float) -> Strategy:
        return cls(f"random_eps{eps:g}", RANDOM, epsilon=eps)

    def plan(self, ctx: SeedContext) -> SelectionPlan:
        if self.kind == CLUSTERED:
            return SelectionPlan.clustered(ctx.clusters[self.metric])
        return SelectionPlan.random(epsilon=self.epsilon, n=self.n)


@dataclass
class CellResult:
    strategy: str
    seed: int
    record: RunRecord | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.record is None


@dataclass
class TableRow:
    strategy: str
    kind: str
    clients_per_round: float
    rounds: float
    energy_wh: float
    acc_std: float
    final_accuracy: float
    converged: int
    seeds: int
    failed: int


@dataclass
class Savings:
    strategy: str
    baseline: str | None
    clients_per_round: float
    baseline_clients_per_round: float | None
    rounds: float
    baseline_rounds: float | None
    round_saving_pct: float | None
    energy_wh: float
    baseline_energy_wh: float | None
    energy_saving_pct: float | None

    @property
    def matched(self) -> bool:
        return self.baseline is not None


@dataclass
class ExperimentResult:
    table: list[TableRow]
    savings: list[Savings]
    cells: list[CellResult]
    contexts: list[SeedContext]

    @property
    def any_failed(self) -> bool:
        return any(c.failed for c in self.cells)

    def row(self, strategy: str) -> TableRow:
        return next(r for r in self.table if r.strategy == strategy)


# --------------------------------------------------------------------------
# Building blocks
# --------------------------------------------------------------------------

def prepare_seed(cfg: ExperimentConfig, train: Dataset, seed: int, metrics: Iterable[str]) -> SeedContext:
    shards = partition_dirichlet(train, cfg.num_clients, cfg.beta, seed, cfg.max_partition_retries)
    P = build_distribution_matrix(shards, train)
    ctx = SeedContext(seed, shards, P, pca_project(P))
    for metric in metrics:
        D = pairwise_dissimilarity(P, metric)
        ctx.dissimilarity[metric] = D
        ctx.clusters[metric] = select_cluster_count(D, cfg.c_max, seed)
    return ctx


def matched_counts(cfg: ExperimentConfig, contexts: Sequence[SeedContext]) -> list[int]:
    """Random-baseline sizes: explicit, or one per metric's mean cluster count."""
    if cfg.random_n != MATCHED:
        return sorted(set(cfg.random_n))
    counts = set()
    for metric in cfg.metrics:
        mean_c = np.mean([ctx.clusters[metric].n_clusters for ctx in contexts])
        counts.add(int(math.floor(mean_c + 0.5)))
    return sorted(counts)


def strategies_for(cfg: ExperimentConfig, contexts: Sequence[SeedContext]) -> list[Strategy]:
    out = [Strategy.clustered(m) for m in cfg.metrics]
    out += [Strategy.random_n(n) for n in matched_counts(cfg, contexts)]
    out += [Strategy.random_eps(e) for e in cfg.random_epsilon]
    return out


def _run_cell(args) -> CellResult:
    strategy, ctx, train, test, cfg = args
    try:
        fed = FedConfig(train, test, ctx.shards, strategy.plan(ctx), cfg.hyperparams,
                        cfg.power, cfg.timing.build(), seed=ctx.seed)
        return CellResult(strategy.name, ctx.seed, record=run_federated(fed))
    except Exception as exc:  # one bad cell must not sink the sweep
        logger.error("cell %s/seed %d failed: %s", strategy.name, ctx.seed, exc)
        return CellResult(strategy.name, ctx.seed, error=f"{type(exc).__name__}: {exc}")


def summarize_cells(strategy: Strategy, cells: Sequence[CellResult]) -> TableRow:
    ok = [c.record for c in cells if not c.failed]

    def mean(values) -> float:
        values = [v for v in values if not math.isnan(v)]
        return float(np.mean(values)) if values else float("nan")

    return TableRow(
        strategy=strategy.name,
        kind=strategy.kind,
        clients_per_round=mean(r.mean_clients_per_round for r in ok),
        rounds=mean(r.rounds_to_converge for r in ok),
        energy_wh=mean(r.total_energy_wh for r in ok),
        acc_std=mean(r.accuracy_std_window for r in ok),
        final_accuracy=mean(r.final_accuracy for r in ok),
        converged=sum(r.converged for r in ok),
        seeds=len(cells),
        failed=len(cells) - len(ok),
    )


def saving_pct(value: float, baseline: float) -> float:
    """Percentage reduction of ``value`` relative to ``baseline`` (negative if worse)."""
    if baseline == 0:
        return 0.0 if value == 0 else float("-inf")
    return (baseline - value) / baseline * 100.0


def compare_summary(table: Sequence[TableRow], tolerance: float = 1.0) -> list[Savings]:
    """Savings of each clustered strategy against its matched random baseline.

    The baseline is the random row whose clients-per-round is closest to the
    strategy's, within ``tolerance``; ties go to the smaller baseline. A
    strategy with no such baseline is reported unmatched.
    """
    baselines = sorted((r for r in table if r.kind == RANDOM),
                       key=lambda r: (r.clients_per_round, r.strategy))
    out = []
    for row in table:
        if row.kind != CLUSTERED:
            continue
        near = [b for b in baselines
                if abs(b.clients_per_round - row.clients_per_round) <= tolerance + 1e-12]
        base = min(near, key=lambda b: abs(b.clients_per_round - row.clients_per_round), default=None)
        if base is None:
            out.append(Savings(row.strategy, None, row.clients_per_round, None, row.rounds, None, None,
                               row.energy_wh, None, None))
            continue
        out.append(Savings(
            row.strategy, base.strategy, row.clients_per_round, base.clients_per_round,
            row.rounds, base.rounds, saving_pct(row.rounds, base.rounds),
            row.energy_wh, base.energy_wh, saving_pct(row.energy_wh, base.energy_wh),
        ))
    return out


# --------------------------------------------------------------------------
# CSV round-tripping
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_dataclass_csv(path: Path, rows: Sequence, cls) -> None:
    names = [f.name for f in fields(cls)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(getattr(row, n)) for n in names])


def _read_dataclass_csv(path: Path, cls) -> list:
    casts = {}
    for f in fields(cls):
        t = str(f.type)
        casts[f.name] = int if t == "int" else float if "float" in t else str
    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            out.append(cls(**{k: (None if v == "" else casts[k](v)) for k, v in raw.items()}))
    return out


def write_table(path: str | Path, table: Sequence[TableRow]) -> None:
    _write_dataclass_csv(Path(path), table, TableRow)


def read_table(path: str | Path) -> list[TableRow]:
    return _read_dataclass_csv(Path(path), TableRow)


def write_savings(path: str | Path, savings: Sequence[Savings]) -> None:
    _write_dataclass_csv(Path(path), savings, Savings)


def read_savings(path: str | Path) -> list[Savings]:
    return _read_dataclass_csv(Path(path), Savings)


def write_cluster_exports(out: Path, metric: str, contexts: Sequence[SeedContext]) -> None:
    with open(out / f"clusters_{metric}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "client_id", "cluster_id", "is_medoid"])
        for ctx in contexts:
            model = ctx.clusters[metric]
            medoids = set(model.medoids.tolist())
            for cid, cl in enumerate(model.assignment):
                writer.writerow([ctx.seed, cid, int(cl), int(cid in medoids)])
    with open(out / f"pca_{metric}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "client_id", "pc1", "pc2", "cluster_id"])
        for ctx in contexts:
            model = ctx.clusters[metric]
            for cid, (x, y) in enumerate(ctx.projection.coords):
                writer.writerow([ctx.seed, cid, repr(float(x)), repr(float(y)), int(model.assignment[cid])])


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# Drivers
# --------------------------------------------------------------------------

def cluster_only(cfg: ExperimentConfig) -> list[SeedContext]:
    """Partition, label matrix, dissimilarities, clusters and PCA; no training."""
    train, _ = cfg.dataset.load()
    contexts = [prepare_seed(cfg, train, seed, cfg.metrics) for seed in cfg.seeds]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ctx in contexts:
        write_matrix_csv(out / f"label_matrix_{ctx.seed}.csv", ctx.label_matrix)
        for metric, D in ctx.dissimilarity.items():
            write_matrix_csv(out / f"dissimilarity_{metric}_{ctx.seed}.csv", D)
    for metric in cfg.metrics:
        write_cluster_exports(out, metric, contexts)
    return contexts


def run_cells(cfg: ExperimentConfig, strategies: Sequence[Strategy], contexts: Sequence[SeedContext],
              train: Dataset, test: Dataset) -> list[CellResult]:
    jobs = [(s, ctx, train, test, cfg) for s in strategies for ctx in contexts]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(job) for job in jobs]


def write_cell_outputs(out: Path, cells: Sequence[CellResult]) -> None:
    for cell in cells:
        if cell.failed:
            continue
        write_rounds_csv(out / f"rounds_{cell.strategy}_{cell.seed}.csv", cell.record.rounds)
        write_ledger_csv(out / f"energy_{cell.strategy}_{cell.seed}.csv", cell.record.ledger.entries)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_summary(out: Path, cfg: ExperimentConfig, result: ExperimentResult) -> None:
    per_cell = [
        {"strategy": c.strategy, "seed": c.seed, "error": c.error,
         **(c.record.summary() if c.record else {})}
        for c in result.cells
    ]
    clustering = [
        {"seed": ctx.seed, "metric": m, "n_clusters": model.n_clusters,
         "silhouette": model.silhouette, "medoids": model.medoids.tolist()}
        for ctx in result.contexts for m, model in ctx.clusters.items()
    ]
    doc = {
        "config": cfg.to_dict(),
        "table": [asdict(r) for r in result.table],
        "savings": [asdict(s) for s in result.savings],
        "cells": per_cell,
        "clustering": clustering,
        "failed_cells": [f"{c.strategy}/{c.seed}" for c in result.cells if c.failed],
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Full A/B sweep: every strategy on every seed, then tables and exports."""
    train, test = cfg.dataset.load()
    contexts = [prepare_seed(cfg, train, seed, cfg.metrics) for seed in cfg.seeds]
    strategies = strategies_for(cfg, contexts)
    for s in strategies:
        if s.kind == RANDOM:
            random_count(cfg.num_clients, s.n if s.n is not None else s.epsilon)
    logger.info("running %d strategies x %d seeds", len(strategies), len(contexts))
    cells = run_cells(cfg, strategies, contexts, train, test)

    table = [summarize_cells(s, [c for c in cells if c.strategy == s.name]) for s in strategies]
    result = ExperimentResult(table, compare_summary(table), cells, contexts)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_cell_outputs(out, cells)
        for metric in cfg.metrics:
            write_cluster_exports(out, metric, contexts)
        write_table(out / "table.csv", table)
        write_savings(out / "savings.csv", result.savings)
        write_summary(out, cfg, result)
    return result
