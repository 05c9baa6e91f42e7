import math

import numpy as np
import pytest

from fedselect.dataio import ClientShard
from fedselect.energy import (
    EnergyLedger,
    InjectedTiming,
    LedgerEntry,
    PowerModel,
    WallClockTiming,
    energy_wh,
    read_ledger_csv,
    total,
    write_ledger_csv,
)
from fedselect.fedcore import FedConfig, HyperParams, run_federated
from fedselect.selection import SelectionPlan


def test_record_arithmetic():
    ledger = EnergyLedger()
    assert ledger.record(0, 100.0, 36.0) == 1.0
    assert ledger.record(1, 250.0, 0.0) == 0.0
    assert ledger.total_wh == 1.0
    assert energy_wh(100.0, 36.0) == 1.0


def test_additivity():
    ledger = EnergyLedger()
    single = energy_wh(73.0, 12.345)
    for k in range(1, 101):
        ledger.record(k % 7, 73.0, 12.345, round_idx=k)
    assert abs(ledger.total_wh - 100 * single) <= 1e-9


def test_totals():
    assert total([]) == 0
    assert total([1.0, 2.5]) == 3.5
    rng = np.random.default_rng(0)
    vals = list(rng.exponential(size=500) * 10.0 ** rng.integers(-6, 6, 500))
    ref = total(vals)
    for _ in range(10):
        rng.shuffle(vals)
        assert abs(total(vals) - ref) <= 1e-9
        assert total(vals) == ref  # fsum is exactly rounded


def test_negative_time_and_power_rejected():
    ledger = EnergyLedger()
    with pytest.raises(ValueError):
        ledger.record(0, 100.0, -1.0)
    with pytest.raises(ValueError):
        ledger.record(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PowerModel(0.0)
    with pytest.raises(ValueError):
        PowerModel((100.0, -5.0))
    with pytest.raises(ValueError):
        InjectedTiming(-1.0, 0.0)


def test_per_client_power():
    pm = PowerModel((10.0, 20.0, 30.0))
    assert pm.for_client(2) == 30.0
    assert PowerModel(55.0).for_client(9) == 55.0


def test_timing_sources():
    assert InjectedTiming(2.0, 0.5).seconds(10, 3, measured=99.0) == 17.0
    assert WallClockTiming().seconds(10, 3, measured=0.25) == 0.25


def test_ledger_csv_round_trip(tmp_path):
    entries = [LedgerEntry(1, 0, 0.1 + 0.2, 1 / 3), LedgerEntry(2, 7, 0.0, 0.0)]
    write_ledger_csv(tmp_path / "e.csv", entries)
    assert read_ledger_csv(tmp_path / "e.csv") == entries


def _run(blobs, clients_per_round):
    train, test = blobs
    shards = [ClientShard(i, np.arange(i * 10, i * 10 + 10)) for i in range(8)]
    h = HyperParams(max_rounds=7, accuracy_threshold=0.999)
    cfg = FedConfig(train, test, shards, SelectionPlan.random(n=clients_per_round), h,
                    power=PowerModel(90.0), timing=InjectedTiming(0.0, 0.004), seed=1)
    return run_federated(cfg)


def test_energy_proportional_to_client_samples(blobs):
    # equal shards, constant per-sample cost: energy scales exactly with clients per round
    small, large = _run(blobs, 2), _run(blobs, 6)
    assert len(small.rounds) == len(large.rounds) == 7
    samples_small = sum(sum(r.sample_counts) for r in small.rounds)
    samples_large = sum(sum(r.sample_counts) for r in large.rounds)
    assert samples_large == 3 * samples_small
    per_sample = 90.0 * 0.004 / 3600
    assert math.isclose(small.total_energy_wh, per_sample * samples_small, rel_tol=1e-12)
    assert math.isclose(large.total_energy_wh, 3 * small.total_energy_wh, rel_tol=1e-12)
    for r in small.rounds:
        assert math.isclose(r.energy_wh, per_sample * sum(r.sample_counts), rel_tol=1e-12)
