import struct

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import logsumexp

from fedselect.dataio import (
    Dataset,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    generate_synthetic,
    load_idx,
    partition_dirichlet,
    train_test_split,
    write_idx,
)


def _reference_read(path):
    # independent reader: numpy big-endian view of the header
    raw = np.fromfile(path, dtype=np.uint8)
    magic = raw[:4].view(">u4")[0]
    ndim = raw[3]
    dims = raw[4:4 + 4 * ndim].view(">u4")
    return magic, tuple(int(d) for d in dims), raw[4 + 4 * ndim:]


def _write_raw(path, magic, dims, payload):
    path.write_bytes(struct.pack(f">I{len(dims)}I", magic, *dims) + bytes(payload))


def test_load_idx_mnist_test_shape(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(10000, 28, 28), dtype=np.uint8)
    labels = np.tile(np.arange(10, dtype=np.uint8), 1000)
    _write_raw(tmp_path / "img", 2051, (10000, 28, 28), images.tobytes())
    _write_raw(tmp_path / "lbl", 2049, (10000,), labels.tobytes())
    assert (tmp_path / "img").read_bytes()[:4] == bytes([0, 0, 8, 3])

    ds = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert len(ds) == 10000 and ds.dim == 784 and ds.num_classes == 10
    assert ds.image_shape == (28, 28)

    magic, dims, payload = _reference_read(tmp_path / "img")
    assert magic == 2051 and dims == (10000, 28, 28)
    np.testing.assert_array_equal(ds.features, payload.reshape(10000, 784) / 255.0)
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0
    _, _, lbl_payload = _reference_read(tmp_path / "lbl")
    np.testing.assert_array_equal(ds.labels, lbl_payload)


def test_write_idx_roundtrip(tmp_path):
    images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "i", tmp_path / "l", images, [0, 1])
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(ds.features * 255.0, images.reshape(2, 12))
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_load_idx_count_mismatch(tmp_path):
    _write_raw(tmp_path / "img", 2051, (3, 2, 2), bytes(12))
    _write_raw(tmp_path / "lbl", 2049, (2,), bytes([0, 1]))
    with pytest.raises(IdxCountMismatchError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


@pytest.mark.parametrize("which", ["images", "labels"])
def test_load_idx_bad_magic(tmp_path, which):
    _write_raw(tmp_path / "img", 2049 if which == "images" else 2051, (2, 2, 2), bytes(8))
    _write_raw(tmp_path / "lbl", 2051 if which == "labels" else 2049, (2,), bytes([0, 1]))
    with pytest.raises(IdxMagicError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_load_idx_truncated_payload(tmp_path):
    _write_raw(tmp_path / "img", 2051, (4, 2, 2), bytes(10))  # needs 16
    _write_raw(tmp_path / "lbl", 2049, (4,), bytes([0, 1, 0, 1]))
    with pytest.raises(IdxTruncatedError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_load_idx_truncated_header(tmp_path):
    (tmp_path / "img").write_bytes(struct.pack(">II", 2051, 4))
    _write_raw(tmp_path / "lbl", 2049, (4,), bytes(4))
    with pytest.raises(IdxTruncatedError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_errors_are_distinct():
    assert len({IdxMagicError, IdxTruncatedError, IdxCountMismatchError}) == 3
    assert not issubclass(IdxMagicError, IdxTruncatedError)


def test_dataset_rejects_missing_label():
    with pytest.raises(ValueError, match="never occur"):
        Dataset(np.zeros((2, 2)), [0, 2], 3)


def test_dataset_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 3], 3)


def test_generate_synthetic_deterministic():
    a = generate_synthetic(10, 16, 100, 0.5, seed=1)
    b = generate_synthetic(10, 16, 100, 0.5, seed=1)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c = generate_synthetic(10, 16, 100, 0.5, seed=2)
    assert not np.array_equal(a.features, c.features)


def test_generate_synthetic_zero_spread_sits_on_means():
    ds = generate_synthetic(2, 2, 1, 0.0, seed=7)
    assert len(ds) == 2
    means = np.random.default_rng(7).standard_normal((2, 2))
    np.testing.assert_array_equal(ds.features, means)
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_generate_synthetic_preconditions():
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 10, 0.1, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(3, 1, 10, 0.1, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(3, 4, 0, 0.1, seed=0)


def test_generate_synthetic_linearly_separable():
    # oracle: a convex softmax-regression fit by L-BFGS
    ds = generate_synthetic(3, 4, 50, 0.3, seed=2)
    X = np.hstack([ds.features, np.ones((len(ds), 1))])
    Y = np.eye(3)[ds.labels]

    def nll(flat):
        Z = X @ flat.reshape(5, 3)
        return -(Z * Y).sum() + logsumexp(Z, axis=1).sum()

    fit = minimize(nll, np.zeros(15), method="L-BFGS-B")
    acc = np.mean(np.argmax(X @ fit.x.reshape(5, 3), axis=1) == ds.labels)
    assert acc > 0.95


def test_train_test_split_stratified():
    ds = generate_synthetic(3, 2, 20, 0.1, seed=0)
    tr, te = train_test_split(ds, 0.25, seed=0)
    assert len(tr) + len(te) == 60
    np.testing.assert_array_equal(np.bincount(te.labels), [5, 5, 5])


@pytest.fixture(scope="module")
def balanced():
    return generate_synthetic(10, 2, 1000, 1.0, seed=3)


def test_partition_rejects_single_client(balanced):
    with pytest.raises(ValueError):
        partition_dirichlet(balanced, 1, 0.5, seed=0)


def test_partition_needs_enough_samples():
    ds = generate_synthetic(2, 2, 2, 0.1, seed=0)
    with pytest.raises(ValueError):
        partition_dirichlet(ds, 5, 0.5, seed=0)


@pytest.mark.parametrize("beta", [0.05, 0.5, 2.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_partition_conserves_labels_and_is_exhaustive(balanced, beta, seed):
    shards = partition_dirichlet(balanced, 20, beta, seed)
    assert [s.client_id for s in shards] == list(range(20))
    assert all(len(s) > 0 for s in shards)
    allidx = np.concatenate([s.sample_indices for s in shards])
    assert len(allidx) == len(balanced)
    np.testing.assert_array_equal(np.sort(allidx), np.arange(len(balanced)))
    per_client = np.array([np.bincount(balanced.labels[s.sample_indices], minlength=10) for s in shards])
    np.testing.assert_array_equal(per_client.sum(axis=0), np.bincount(balanced.labels))


def test_partition_deterministic(balanced):
    a = partition_dirichlet(balanced, 20, 0.05, seed=9)
    b = partition_dirichlet(balanced, 20, 0.05, seed=9)
    assert a == b
    assert b"".join(s.sample_indices.tobytes() for s in a) == b"".join(s.sample_indices.tobytes() for s in b)


def test_partition_high_beta_near_uniform(balanced):
    for seed in range(5):
        for s in partition_dirichlet(balanced, 10, 1000.0, seed):
            dist = np.bincount(balanced.labels[s.sample_indices], minlength=10) / len(s)
            assert np.max(np.abs(dist - 0.1)) <= 0.05


def test_partition_skew_monotone_in_beta(balanced):
    def mean_entropy(beta):
        ents = []
        for seed in range(5):
            for s in partition_dirichlet(balanced, 20, beta, seed):
                p = np.bincount(balanced.labels[s.sample_indices], minlength=10) / len(s)
                p = p[p > 0]
                ents.append(-(p * np.log(p)).sum())
        return np.mean(ents)

    assert mean_entropy(0.05) < mean_entropy(2.0)


def test_partition_tops_up_empty_clients():
    # 3 samples over 3 clients with extreme skew: retries cannot help, top-up must
    ds = Dataset(np.zeros((3, 2)), [0, 0, 0], 1)
    shards = partition_dirichlet(ds, 3, 1e-3, seed=0, max_retries=0)
    assert sorted(len(s) for s in shards) == [1, 1, 1]
