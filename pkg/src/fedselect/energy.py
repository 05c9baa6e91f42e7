"""Computation energy of local training: watts times training seconds.

Training time comes from a pluggable timing source. ``InjectedTiming`` is a
deterministic cost model and the default everywhere reproducibility
matters; ``WallClockTiming`` measures real elapsed time.
"""

from __future__ import annotations

import csv
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class PowerModel:
    """Hardware power per client in watts (one value, or one per client)."""

    watts: float | tuple[float, ...] = 100.0

    def __post_init__(self) -> None:
        values = self.watts if isinstance(self.watts, tuple) else (self.watts,)
        if not values or any(not (w > 0 and math.isfinite(w)) for w in values):
            raise ValueError("power must be positive and finite")

    def for_client(self, client_id: int) -> float:
        if isinstance(self.watts, tuple):
            return float(self.watts[client_id])
        return float(self.watts)


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    client_id: int
    seconds: float
    wh: float


@dataclass
class EnergyLedger:
    entries: list[LedgerEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, client_id: int, watts: float, seconds: float, round_idx: int = 0) -> float:
        """Append one training episode and return its energy in Wh."""
        if not watts > 0:
            raise ValueError("power must be positive")
        if seconds < 0 or not math.isfinite(seconds):
            raise ValueError(f"training time must be non-negative, got {seconds}")
        wh = watts * seconds / SECONDS_PER_HOUR
        with self._lock:
            self.entries.append(LedgerEntry(round_idx, client_id, float(seconds), wh))
        return wh

    @property
    def total_wh(self) -> float:
        return total(self.entries)


def energy_wh(watts: float, seconds: float) -> float:
    return watts * seconds / SECONDS_PER_HOUR


def total(entries: Sequence[LedgerEntry] | Sequence[float]) -> float:
    """Exactly rounded sum of entry energies (order-independent)."""
    return math.fsum(e.wh if isinstance(e, LedgerEntry) else float(e) for e in entries)


@dataclass(frozen=True)
class InjectedTiming:
    """t_train = base_seconds + per_sample_seconds * n_samples * local_epochs."""

    base_seconds: float = 0.0
    per_sample_seconds: float = 1e-3

    def __post_init__(self) -> None:
        if self.base_seconds < 0 or self.per_sample_seconds < 0:
            raise ValueError("timing coefficients must be non-negative")

    def seconds(self, n_samples: int, local_epochs: int, measured: float) -> float:
        return self.base_seconds + self.per_sample_seconds * n_samples * local_epochs


@dataclass(frozen=True)
class WallClockTiming:
    def seconds(self, n_samples: int, local_epochs: int, measured: float) -> float:
        return measured


clock = time.perf_counter

LEDGER_FIELDS = ["round", "client_id", "seconds", "wh"]


def write_ledger_csv(path: str | Path, entries: Sequence[LedgerEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LEDGER_FIELDS)
        for e in entries:
            writer.writerow([e.round, e.client_id, repr(e.seconds), repr(e.wh)])


def read_ledger_csv(path: str | Path) -> list[LedgerEntry]:
    with open(path, newline="") as fh:
        return [
            LedgerEntry(int(r["round"]), int(r["client_id"]), float(r["seconds"]), float(r["wh"]))
            for r in csv.DictReader(fh)
        ]
