import io
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from parmac.data import (BYTE, Dataset, KernelConfig, generate_synthetic, partition, pca_hash, pca_init,
                         rbf_dataset, rbf_featurize, read_bvecs, read_fvecs, sample_centers,
                         synthetic_means, train_validation_split, write_bvecs, write_fvecs)
from parmac.errors import DegenerateCovariance, EmptyShard, InconsistentDim, MalformedRecord


def fvecs_record(values):
    return struct.pack("<i", len(values)) + struct.pack(f"<{len(values)}f", *values)


# ---------------------------------------------------------------- vecs readers


def test_fvecs_single_record():
    ds = read_fvecs(fvecs_record([1.0, 2.0]))
    assert (ds.n_points, ds.dim) == (1, 2)
    assert ds.values.dtype == np.float64
    np.testing.assert_array_equal(ds.values, [[1.0, 2.0]])


def test_empty_stream_is_empty_dataset():
    for reader in (read_fvecs, read_bvecs):
        ds = reader(b"")
        assert (ds.n_points, ds.dim) == (0, 0)


def test_reader_accepts_stream_and_path(tmp_path):
    blob = fvecs_record([3.0]) + fvecs_record([4.0])
    p = tmp_path / "x.fvecs"
    p.write_bytes(blob)
    for src in (blob, io.BytesIO(blob), p, str(p)):
        np.testing.assert_array_equal(read_fvecs(src).values, [[3.0], [4.0]])


def test_bvecs_keeps_bytes():
    ds = read_bvecs(struct.pack("<i", 3) + bytes([0, 128, 255]))
    assert ds.storage_kind == BYTE
    assert ds.values.dtype == np.uint8
    np.testing.assert_array_equal(ds.values, [[0, 128, 255]])
    np.testing.assert_array_equal(ds.rows(), [[0.0, 128.0, 255.0]])


@pytest.mark.parametrize("blob", [
    struct.pack("<i", 3) + bytes([1, 2]),          # payload cut short
    struct.pack("<i", 3)[:2],                        # header cut short
    struct.pack("<i", -1),                           # negative dimension
])
def test_truncated_bvecs(blob):
    with pytest.raises(MalformedRecord):
        read_bvecs(blob)


def test_truncated_fvecs():
    with pytest.raises(MalformedRecord):
        read_fvecs(fvecs_record([1.0, 2.0])[:-1])


def test_inconsistent_dimension():
    with pytest.raises(InconsistentDim):
        read_fvecs(fvecs_record([1.0, 2.0]) + fvecs_record([1.0]))


def test_sift_style_records_have_128_dims():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 200, size=(5, 128)).astype(np.float32)
    ds = read_fvecs(write_fvecs(x))
    assert ds.dim == 128


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 16))))
def test_bvecs_round_trip(values):
    ds = read_bvecs(write_bvecs(Dataset(values, BYTE)))
    np.testing.assert_array_equal(ds.values, values)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 16)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_fvecs_round_trip(values):
    ds = read_fvecs(write_fvecs(values.astype(np.float64)))
    np.testing.assert_array_equal(ds.values, values.astype(np.float64))


# ---------------------------------------------------------------- synthetic data


def test_synthetic_is_deterministic():
    a = generate_synthetic(10, 2, 1, seed=7)
    b = generate_synthetic(10, 2, 1, seed=7)
    np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.parametrize("args", [(0, 2, 1), (5, 0, 1), (5, 2, 0)])
def test_synthetic_rejects_empty(args):
    with pytest.raises(ValueError):
        generate_synthetic(*args, seed=0)


def test_synthetic_means_recovered_by_kmeans():
    from scipy.optimize import linear_sum_assignment
    from sklearn.cluster import KMeans

    ds = generate_synthetic(2000, 2, 3, seed=3)
    true = synthetic_means(2, 3, seed=3)
    km = KMeans(n_clusters=3, n_init=10, random_state=0).fit(ds.values)
    cost = ((km.cluster_centers_[:, None, :] - true[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    err = np.sqrt(cost[rows, cols])
    assert err.max() < 0.2


def test_validation_split_is_disjoint_and_seeded():
    ds = Dataset(np.arange(100, dtype=float).reshape(50, 2))
    tr, va = train_validation_split(ds, 0.1, seed=4)
    assert (tr.n_points, va.n_points) == (45, 5)
    allrows = np.vstack([tr.values, va.values])
    assert sorted(map(tuple, allrows)) == sorted(map(tuple, ds.values))
    tr2, va2 = train_validation_split(ds, 0.1, seed=4)
    np.testing.assert_array_equal(va.values, va2.values)


# ---------------------------------------------------------------- partition


@pytest.mark.parametrize("n, speeds, sizes", [
    (40, (1, 1, 1, 1), [10, 10, 10, 10]),
    (40, (2, 1, 1), [20, 10, 10]),
    (10, (1, 1, 1), [4, 3, 3]),
])
def test_partition_sizes(n, speeds, sizes):
    part = partition(n, speeds)
    assert part.sizes == sizes
    np.testing.assert_array_equal(np.concatenate(part.shard_index_sets), np.arange(n))


def test_partition_empty_shard():
    with pytest.raises(EmptyShard):
        partition(10, (1000, 1, 1))


def test_partition_needs_enough_points():
    with pytest.raises(ValueError):
        partition(2, (1, 1, 1))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 500), st.lists(st.floats(0.1, 10.0), min_size=1, max_size=12))
def test_partition_proportional_cover(n, speeds):
    P = len(speeds)
    if n < P:
        return
    try:
        part = partition(n, speeds)
    except EmptyShard:
        return
    idx = np.concatenate(part.shard_index_sets)
    np.testing.assert_array_equal(np.sort(idx), np.arange(n))
    ideal = n * np.asarray(speeds) / np.sum(speeds)
    assert np.all(np.abs(np.asarray(part.sizes) - ideal) < 1 + (P - 1) / P)


# ---------------------------------------------------------------- PCA codes


def test_pca_constant_dataset_pads_zero_bits():
    ds = Dataset(np.ones((20, 3)))
    with pytest.warns(DegenerateCovariance):
        res = pca_hash(ds, 2)
    assert res.degenerate_bits == 2
    assert res.log
    np.testing.assert_array_equal(res.codes, np.zeros((20, 2)))


def test_pca_single_axis():
    x = np.array([-3.0, -1.0, 0.0, 2.5, 4.0, 7.0])
    ds = Dataset(np.column_stack([x, np.zeros_like(x)]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        codes = pca_init(ds, 1)
    np.testing.assert_array_equal(codes[:, 0], (x >= x.mean()).astype(np.uint8))


def test_pca_matches_dense_eigensolver():
    from scipy.linalg import eigh

    rng = np.random.default_rng(11)
    X = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5))
    codes = pca_init(Dataset(X), 2)
    C = np.cov(X, rowvar=False, bias=True)
    w, V = eigh(C)
    V = V[:, np.argsort(w)[::-1][:2]]
    proj = (X - X.mean(axis=0)) @ V
    oracle = (proj >= 0).astype(np.uint8)
    for l in range(2):
        # eigenvector sign is arbitrary, so the oracle bit may be complemented
        same = np.array_equal(codes[:, l], oracle[:, l])
        flipped = np.array_equal(codes[:, l], 1 - oracle[:, l])
        assert same or flipped


def test_pca_subset_is_seeded():
    ds = generate_synthetic(500, 6, 4, seed=1)
    a = pca_init(ds, 3, subset_size=100, seed=5)
    b = pca_init(ds, 3, subset_size=100, seed=5)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (500, 3)


def test_pca_rejects_too_many_bits():
    with pytest.raises(ValueError):
        pca_init(Dataset(np.zeros((4, 2))), 3)


# ---------------------------------------------------------------- RBF features


def test_rbf_known_value():
    cfg = KernelConfig(np.array([[3.0, 4.0]]), bandwidth=5.0)
    assert rbf_featurize(np.array([0.0, 0.0]), cfg)[0] == 155


def test_rbf_at_center_and_far_away():
    cfg = KernelConfig(np.array([[1.0, 1.0], [2.0, -1.0]]), bandwidth=0.5)
    out = rbf_featurize(np.array([1.0, 1.0]), cfg)
    assert out[0] == 255
    assert rbf_featurize(np.array([1e6, 1e6]), cfg).tolist() == [0, 0]


def test_rbf_quantisation_error_bound():
    rng = np.random.default_rng(2)
    ds = Dataset(rng.normal(size=(200, 3)))
    cfg = sample_centers(ds, 10, bandwidth=1.5, seed=0)
    feat = rbf_dataset(ds, cfg)
    assert feat.storage_kind == BYTE
    X = ds.rows()
    exact = np.exp(-((X[:, None, :] - cfg.centers[None]) ** 2).sum(axis=2) / (2 * 1.5 ** 2))
    assert np.max(np.abs(feat.rows() - exact)) <= 1 / 510 + 1e-12


def test_centers_are_distinct_points():
    ds = Dataset(np.arange(40, dtype=float).reshape(20, 2))
    cfg = sample_centers(ds, 20, 1.0, seed=3)
    assert len({tuple(c) for c in cfg.centers}) == 20
