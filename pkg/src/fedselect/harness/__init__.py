"""Experiment runner: JSON configs, seed sweeps, comparison tables, CLI."""

from .config import ConfigError, DatasetSpec, ExperimentConfig, TimingSpec
from .experiment import (
    ExperimentResult,
    Savings,
    TableRow,
    compare_summary,
    read_table,
    run_experiment,
    saving_pct,
    write_table,
)
