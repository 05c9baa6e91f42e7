"""JSON experiment configuration.

Every field has a default, and ``to_dict`` echoes the fully resolved config
into the outputs so each result file is self-describing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..dataio import Dataset, generate_synthetic, load_idx, sample_subset, train_test_split
from ..energy import InjectedTiming, PowerModel, WallClockTiming
from ..fedcore import HyperParams
from ..metrics import MetricId

MATCHED = "matched"


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    # synthetic
    num_classes: int = 10
    dim: int = 16
    samples_per_class: int = 300
    spread: float = 1.0
    seed: int = 1234
    test_fraction: float = 0.25
    # idx
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None

    def load(self) -> tuple[Dataset, Dataset]:
        if self.source == "synthetic":
            full = generate_synthetic(self.num_classes, self.dim, self.samples_per_class, self.spread, self.seed)
            return train_test_split(full, self.test_fraction, self.seed)
        train = load_idx(self.train_images, self.train_labels)
        if self.train_subset:
            train = sample_subset(train, self.train_subset, self.seed)
        if self.test_images:
            test = load_idx(self.test_images, self.test_labels)
            if self.test_subset:
                test = sample_subset(test, self.test_subset, self.seed)
            return train, test
        return train_test_split(train, self.test_fraction, self.seed)


@dataclass
class TimingSpec:
    mode: str = "injected"
    base_seconds: float = 0.0
    per_sample_seconds: float = 1e-3

    def build(self) -> InjectedTiming | WallClockTiming:
        if self.mode == "wallclock":
            return WallClockTiming()
        return InjectedTiming(self.base_seconds, self.per_sample_seconds)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    num_clients: int = 20
    beta: float = 0.05
    metrics: list[str] = field(default_factory=lambda: [m.value for m in MetricId if m is not MetricId.RANDOM])
    random_n: list[int] | str = MATCHED
    random_epsilon: list[float] = field(default_factory=list)
    c_max: int | None = None
    hyperparams: HyperParams = field(default_factory=HyperParams)
    power_watts: float | list[float] = 100.0
    timing: TimingSpec = field(default_factory=TimingSpec)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "results"
    workers: int = 1
    max_partition_retries: int = 10

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if self.num_clients < 4:
            raise ConfigError("num_clients must be at least 4")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        try:
            parsed = [MetricId.parse(m) for m in self.metrics]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.metrics = [m.value for m in parsed if m is not MetricId.RANDOM]
        explicit_n = isinstance(self.random_n, list) and bool(self.random_n)
        wants_random = MetricId.RANDOM in parsed or explicit_n or bool(self.random_epsilon)
        if not self.metrics and not wants_random:
            raise ConfigError("configure at least one metric or random baseline")
        if isinstance(self.random_n, str):
            if self.random_n != MATCHED:
                raise ConfigError(f"random_n must be a list of counts or {MATCHED!r}")
        elif any(not 1 <= n <= self.num_clients for n in self.random_n):
            raise ConfigError(f"random_n entries must lie in [1, {self.num_clients}]")
        if any(not 0 < e <= 1 for e in self.random_epsilon):
            raise ConfigError("random_epsilon entries must lie in (0, 1]")
        if self.c_max is not None and not 2 <= self.c_max <= self.num_clients - 1:
            raise ConfigError(f"c_max must lie in [2, {self.num_clients - 1}]")
        if isinstance(self.power_watts, list) and len(self.power_watts) != self.num_clients:
            raise ConfigError("per-client power list must have num_clients entries")
        if self.timing.mode not in ("injected", "wallclock"):
            raise ConfigError("timing.mode must be 'injected' or 'wallclock'")
        if self.dataset.source not in ("synthetic", "idx"):
            raise ConfigError("dataset.source must be 'synthetic' or 'idx'")
        if self.dataset.source == "idx" and not (self.dataset.train_images and self.dataset.train_labels):
            raise ConfigError("idx datasets need train_images and train_labels")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def power(self) -> PowerModel:
        w = self.power_watts
        return PowerModel(tuple(float(x) for x in w) if isinstance(w, list) else float(w))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ExperimentConfig:
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "dataset" in raw:
                raw["dataset"] = DatasetSpec(**raw["dataset"])
            if "timing" in raw:
                raw["timing"] = TimingSpec(**raw["timing"])
            if "hyperparams" in raw:
                raw["hyperparams"] = HyperParams(**raw["hyperparams"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
