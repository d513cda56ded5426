import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parmac.data import BYTE, Dataset
from parmac.errors import CheckpointError, SingularNormalMatrix
from parmac.model import (HINGE, SQUARED, BAModel, SgdConfig, decode, e_ba, e_q, encode, fit_decoder_lsq,
                          fit_decoder_sgd, fit_svm_sgd, head_indices, hinge_objective, load_checkpoint,
                          objective, probe_step_size, save_checkpoint, sgd_pass)


def loop_encode(A, X):
    L, D1 = A.shape
    out = np.zeros((len(X), L), dtype=np.uint8)
    for n, x in enumerate(X):
        for l in range(L):
            t = sum(A[l, d] * x[d] for d in range(D1 - 1)) + A[l, D1 - 1]
            out[n, l] = 1 if t >= 0 else 0
    return out


def loop_decode(F, Z):
    D, L1 = F.shape
    return np.array([[sum(F[d, l] * z[l] for l in range(L1 - 1)) + F[d, L1 - 1] for d in range(D)] for z in Z])


# ---------------------------------------------------------------- encode / decode


def test_zero_encoder_gives_all_ones():
    np.testing.assert_array_equal(encode(np.zeros((3, 5)), np.random.default_rng(0).normal(size=(4, 4))),
                                  np.ones((4, 3)))


def test_one_dimensional_encoder():
    assert encode(np.array([[1.0, -2.0]]), np.array([3.0])).tolist() == [1]
    assert encode(np.array([[1.0, -2.0]]), np.array([1.0])).tolist() == [0]


def test_encode_decode_match_loop_oracles():
    rng = np.random.default_rng(5)
    A, X = rng.normal(size=(4, 7)), rng.normal(size=(30, 6))
    np.testing.assert_array_equal(encode(A, X), loop_encode(A, X))
    F, Z = rng.normal(size=(6, 5)), rng.integers(0, 2, size=(30, 4))
    np.testing.assert_allclose(decode(F, Z), loop_decode(F, Z), rtol=1e-12, atol=1e-12)


def test_zero_decoder_returns_bias():
    F = np.zeros((3, 3))
    F[:, -1] = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(decode(F, np.array([1, 0])), [1.0, 2.0, 3.0])


def test_decode_accepts_relaxed_codes():
    F = np.array([[2.0, 0.0]])
    np.testing.assert_array_equal(decode(F, np.array([0.25])), [0.5])


# ---------------------------------------------------------------- objectives


def test_e_ba_simple_cases():
    A, F = np.zeros((1, 3)), np.zeros((2, 2))
    assert e_ba(A, F, np.array([[1.0, 0.0]])) == 1.0
    F[:, -1] = [1.0, 0.0]
    assert e_ba(A, F, np.array([[1.0, 0.0]])) == 0.0


def test_e_ba_and_e_q_match_double_loop():
    rng = np.random.default_rng(8)
    A, F, X = rng.normal(size=(3, 5)), rng.normal(size=(4, 4)), rng.normal(size=(12, 4))
    Z = rng.integers(0, 2, size=(12, 3)).astype(np.uint8)
    H = loop_encode(A, X)
    ref_ba = sum(sum((X[n, d] - loop_decode(F, H[n:n + 1])[0, d]) ** 2 for d in range(4)) for n in range(12))
    assert e_ba(A, F, X) == pytest.approx(ref_ba, rel=1e-12)
    mu = 0.37
    ref_q = sum(sum((X[n, d] - loop_decode(F, Z[n:n + 1])[0, d]) ** 2 for d in range(4))
                + mu * sum(int(Z[n, l] != H[n, l]) for l in range(3)) for n in range(12))
    assert e_q(A, F, Z, mu, X) == pytest.approx(ref_q, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_e_q_properties(seed):
    rng = np.random.default_rng(seed)
    A, F, X = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(10, 3))
    assert e_q(A, F, encode(A, X), 5.0, X) == e_ba(A, F, X)
    Z = rng.integers(0, 2, size=(10, 3)).astype(np.uint8)
    c0 = e_q(A, F, Z, 0.0, X)
    c1 = np.count_nonzero(Z != encode(A, X))
    for mu in (0.5, 2.0, 7.5):
        assert e_q(A, F, Z, mu, X) == pytest.approx(c0 + mu * c1, rel=1e-12, abs=1e-12)


def test_e_q_rejects_negative_mu():
    with pytest.raises(ValueError):
        e_q(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 1)), -1.0, np.zeros((1, 1)))


# ---------------------------------------------------------------- SGD trainers


def separable_toy(seed=0, n=200):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    margin = X[:, 0] + 0.5 * X[:, 1] - 0.1
    keep = np.abs(margin) > 0.15
    return X[keep], (margin[keep] > 0).astype(np.uint8)


def test_svm_constant_labels():
    X = np.random.default_rng(1).normal(size=(50, 3))
    for label in (0, 1):
        w = fit_svm_sgd(X, np.full(50, label), np.zeros(4), SgdConfig(epochs=5))
        assert np.all(encode(w[None, :], X)[:, 0] == label)


def test_svm_separable_toy_reaches_zero_error():
    X, y = separable_toy()
    w = fit_svm_sgd(X, y, np.zeros(3), SgdConfig(epochs=60, svm_lambda=1e-6, minibatch_size=8, seed=1))
    assert np.count_nonzero(encode(w[None, :], X)[:, 0] != y) == 0


def test_svm_one_pass_decreases_objective():
    X, y = separable_toy(seed=3)
    cfg = SgdConfig(epochs=1)
    w0 = np.zeros(3)
    w1 = fit_svm_sgd(X, y, w0, cfg)
    assert hinge_objective(w1, X, y, cfg.svm_lambda) < hinge_objective(w0, X, y, cfg.svm_lambda)


def test_svm_is_deterministic_per_seed():
    X, y = separable_toy(seed=4)
    a = fit_svm_sgd(X, y, np.zeros(3), SgdConfig(epochs=3, seed=9))
    b = fit_svm_sgd(X, y, np.zeros(3), SgdConfig(epochs=3, seed=9))
    np.testing.assert_array_equal(a, b)


def test_svm_byte_dataset_widened_per_batch():
    vals = np.random.default_rng(0).integers(0, 256, size=(60, 3)).astype(np.uint8)
    labels = (vals[:, 0] > 127).astype(np.uint8)
    byte_ds = Dataset(vals, BYTE, scale=1 / 255)
    cfg = SgdConfig(epochs=2)
    np.testing.assert_allclose(fit_svm_sgd(byte_ds, labels, np.zeros(4), cfg),
                               fit_svm_sgd(vals / 255.0, labels, np.zeros(4), cfg), rtol=1e-12, atol=1e-14)


def test_decoder_lsq_exact_linear():
    rng = np.random.default_rng(2)
    Z = rng.integers(0, 2, size=(40, 3))
    F_true = rng.normal(size=(5, 4))
    X = decode(F_true, Z)
    np.testing.assert_allclose(fit_decoder_lsq(Z, X), F_true, atol=1e-9)


def test_decoder_lsq_two_point_closed_form():
    # L=1, D=1, points (z=0, x=1) and (z=1, x=4): x = 3 z + 1
    F = fit_decoder_lsq(np.array([[0], [1]]), np.array([[1.0], [4.0]]))
    G = np.array([[1.0, 1.0], [1.0, 2.0]])      # [z;1]^T [z;1] with columns (z, 1)
    rhs = np.array([4.0, 5.0])
    np.testing.assert_allclose(F[0], np.linalg.solve(G, rhs), atol=1e-12)
    np.testing.assert_allclose(F[0], [3.0, 1.0], atol=1e-12)


def test_decoder_lsq_is_global_minimum():
    rng = np.random.default_rng(6)
    Z = rng.integers(0, 2, size=(50, 4))
    X = rng.normal(size=(50, 3))
    F = fit_decoder_lsq(Z, X)

    def sse(G):
        return float(((X - decode(G, Z)) ** 2).sum())
    base = sse(F)
    for _ in range(100):
        assert sse(F + 1e-3 * rng.normal(size=F.shape)) > base


def test_decoder_lsq_singular_ridge_fallback():
    Z = np.zeros((10, 2), dtype=np.uint8)
    with pytest.warns(SingularNormalMatrix):
        F = fit_decoder_lsq(Z, np.ones((10, 2)))
    assert np.all(np.isfinite(F))


def test_decoder_sgd_approaches_lsq():
    rng = np.random.default_rng(7)
    Z = rng.integers(0, 2, size=(60, 2))
    X = decode(rng.normal(size=(2, 3)), Z) + 0.05 * rng.normal(size=(60, 2))
    exact = fit_decoder_lsq(Z, X)
    sgd = fit_decoder_sgd(X, Z, np.zeros((2, 3)), SgdConfig(epochs=400, minibatch_size=4, decay=0.05))
    assert np.linalg.norm(sgd - exact) / np.linalg.norm(exact) < 1e-2


def test_decoder_sgd_constant_target_learns_bias():
    Z = np.random.default_rng(3).integers(0, 2, size=(50, 2))
    X = np.full((50, 1), 2.5)
    w = fit_decoder_sgd(X, Z, np.zeros(3), SgdConfig(epochs=200, decay=0.0))
    assert decode(w[None, :], Z) == pytest.approx(np.full((50, 1), 2.5), abs=1e-3)


# ---------------------------------------------------------------- step-size probe


def test_probe_single_candidate():
    X1 = np.ones((5, 2))
    assert probe_step_size(HINGE, np.zeros(2), X1, np.ones(5), [0.3]) == 0.3


def test_probe_never_picks_divergent_step():
    # squared loss on x=1: steps above 2 diverge, 1.0 solves in one step
    X1 = np.ones((10, 1))
    y = np.full(10, 3.0)
    step = probe_step_size(SQUARED, np.zeros(1), X1, y, [1.0, 3.0, 50.0], minibatch_size=10)
    assert step == 1.0


def test_probe_ties_go_to_smaller_step():
    X1 = np.zeros((4, 2))   # gradient is zero, every step gives the same loss
    assert probe_step_size(SQUARED, np.zeros(2), X1, np.zeros(4), [0.5, 0.1, 0.2]) == 0.1


def test_probe_head_size():
    assert len(head_indices(5000)) == 1000
    assert len(head_indices(30)) == 30


def test_sgd_pass_hinge_gradient_matches_objective():
    rng = np.random.default_rng(0)
    X1 = np.hstack([rng.normal(size=(20, 2)), np.ones((20, 1))])
    y = np.sign(rng.normal(size=20))
    w = rng.normal(size=3) * 0.01
    w1 = sgd_pass(HINGE, w, X1.__getitem__, y, 1e-3, 20, lam=1e-2)
    assert objective(HINGE, w1, X1, y, 1e-2) < objective(HINGE, w, X1, y, 1e-2)


# ---------------------------------------------------------------- checkpoint


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_checkpoint_round_trip(L, D, seed):
    rng = np.random.default_rng(seed)
    m = BAModel(rng.normal(size=(L, D + 1)), rng.normal(size=(D, L + 1)))
    back = load_checkpoint(save_checkpoint(m))
    assert back.same_as(m)


def test_checkpoint_layout():
    m = BAModel(np.arange(6, dtype=float).reshape(2, 3), np.arange(6, dtype=float).reshape(2, 3) + 10)
    blob = save_checkpoint(m)
    assert blob[:4] == b"PMAC"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:16], "little") == 2
    assert np.frombuffer(blob[16:], "<f8").tolist() == list(range(6)) + list(range(10, 16))


@pytest.mark.parametrize("mutate", [
    lambda b: b[:10],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:],
    lambda b: b[:-8],
    lambda b: b[:-3],
])
def test_checkpoint_rejects_bad_blobs(mutate):
    with pytest.raises(CheckpointError):
        load_checkpoint(mutate(save_checkpoint(BAModel.zeros(2, 3))))


def test_submodel_views():
    m = BAModel.zeros(2, 3)
    assert m.n_submodels == 5
    m.set_submodel(1, np.ones(4))
    m.set_submodel(4, np.full(3, 2.0))
    np.testing.assert_array_equal(m.A[1], np.ones(4))
    np.testing.assert_array_equal(m.F[2], np.full(3, 2.0))
    np.testing.assert_array_equal(m.get_submodel(4), np.full(3, 2.0))
