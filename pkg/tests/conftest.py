import numpy as np
import pytest

from fedselect.dataio import generate_synthetic, train_test_split


@pytest.fixture(scope="session")
def blobs():
    """Small 4-class synthetic problem split into train/test."""
    full = generate_synthetic(4, 6, 60, 0.6, seed=11)
    return train_test_split(full, 0.25, seed=11)


def random_simplex(rng, k, size=None, sparse=False):
    """Random probability vectors; ``sparse`` zeroes out some entries."""
    shape = (k,) if size is None else (size, k)
    x = rng.exponential(size=shape)
    if sparse:
        x = x * (rng.random(shape) < 0.5)
        flat = x.reshape(-1, k)
        empty = flat.sum(axis=1) == 0
        flat[empty, 0] = 1.0
    return x / x.sum(axis=-1, keepdims=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
