"""Command line entry point: ``fedselect {cluster,train,experiment,summarize}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..energy import write_ledger_csv
from ..fedcore import FedConfig, run_federated, write_rounds_csv
from ..metrics import MetricId
from .config import ConfigError, ExperimentConfig
from .experiment import (
    Strategy,
    cluster_only,
    compare_summary,
    prepare_seed,
    read_table,
    run_experiment,
    write_savings,
)

logger = logging.getLogger("fedselect")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "metric", None):
        overrides["metrics"] = args.metric
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


def cmd_cluster(args) -> int:
    cfg = _load_config(args)
    contexts = cluster_only(cfg)
    for ctx in contexts:
        for metric, model in ctx.clusters.items():
            print(f"seed={ctx.seed} metric={metric} clusters={model.n_clusters} "
                  f"silhouette={model.silhouette:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.random_n is not None:
        strategy = Strategy.random_n(args.random_n)
        metrics: list[str] = []
    else:
        if len(cfg.metrics) != 1:
            raise ConfigError("train runs one strategy: pass a single --metric or --random-n")
        strategy = Strategy.clustered(cfg.metrics[0])
        metrics = cfg.metrics
    train, test = cfg.dataset.load()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for seed in cfg.seeds:
        ctx = prepare_seed(cfg, train, seed, metrics)
        fed = FedConfig(train, test, ctx.shards, strategy.plan(ctx), cfg.hyperparams,
                        cfg.power, cfg.timing.build(), seed=seed)
        try:
            record = run_federated(fed)
        except Exception as exc:
            logger.error("%s seed %d failed: %s", strategy.name, seed, exc)
            status = 1
            continue
        write_rounds_csv(out / f"rounds_{strategy.name}_{seed}.csv", record.rounds)
        write_ledger_csv(out / f"energy_{strategy.name}_{seed}.csv", record.ledger.entries)
        summary = {"strategy": strategy.name, "seed": seed, **record.summary(), "config": cfg.to_dict()}
        with open(out / f"run_{strategy.name}_{seed}.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"{strategy.name} seed={seed} rounds={record.rounds_to_converge} "
              f"converged={record.converged} energy_wh={record.total_energy_wh:.4f}")
    return status


def _print_table(table, savings) -> None:
    print(f"{'strategy':<16}{'clients/rnd':>12}{'rounds':>9}{'energy Wh':>12}{'acc std':>11}{'conv':>6}")
    for r in table:
        print(f"{r.strategy:<16}{r.clients_per_round:>12.3f}{r.rounds:>9.1f}{r.energy_wh:>12.4f}"
              f"{r.acc_std:>11.6f}{r.converged:>4}/{r.seeds}")
    if savings:
        print()
        for s in savings:
            if s.matched:
                print(f"{s.strategy:<16} vs {s.baseline:<14} rounds {s.round_saving_pct:+7.2f}%  "
                      f"energy {s.energy_saving_pct:+7.2f}%")
            else:
                print(f"{s.strategy:<16} unmatched (no random baseline within 1 client/round)")


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    _print_table(result.table, result.savings)
    failed = [f"{c.strategy}/{c.seed}" for c in result.cells if c.failed]
    if failed:
        print(f"\n{len(failed)} failed cells: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_summarize(args) -> int:
    table_path = Path(args.table)
    if table_path.is_dir():
        table_path = table_path / "table.csv"
    table = read_table(table_path)
    savings = compare_summary(table)
    _print_table(table, savings)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_savings(args.out, savings)
    return 1 if any(r.failed for r in table) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedselect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, metric_nargs="+"):
        p.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        p.add_argument("--metric", nargs=metric_nargs, choices=[m.value for m in MetricId],
                       help="override the config's metric list")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("cluster", help="label matrix, dissimilarities, clusters and PCA exports")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="federated training with one selection strategy")
    common(p, metric_nargs=1)
    p.add_argument("--random-n", type=int, help="use random selection of this many clients")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="full clustered-vs-random sweep")
    common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("summarize", help="savings report from an existing table.csv")
    p.add_argument("table", help="table.csv or the directory holding it")
    p.add_argument("--out", help="write the savings report as CSV")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
