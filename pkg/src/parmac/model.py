"""Binary autoencoder: step-function encoder, linear decoder, objectives and trainers.

Both weight matrices carry their bias in the last column: the encoder is
``A`` with shape (L, D+1) and the decoder is ``F`` with shape (D, L+1).
Every row of either matrix is one independently trainable submodel.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import CheckpointError, SingularNormalMatrix

HINGE = "hinge"        # one hash bit: L2-regularised linear SVM
SQUARED = "squared"    # one decoder row: least squares

RIDGE_EPS = 1e-8


def augment(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def encode(A: np.ndarray, X) -> np.ndarray:
    """h(x) = step(A [x; 1]) with step(0) = 1. Accepts one point or a matrix."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    codes = (X @ A[:, :-1].T + A[:, -1] >= 0).astype(np.uint8)
    return codes[0] if single else codes


def decode(F: np.ndarray, Z) -> np.ndarray:
    """f(z) = F [z; 1]; relaxed codes in [0, 1] are accepted."""
    Z = np.asarray(Z, dtype=np.float64)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    out = Z @ F[:, :-1].T + F[:, -1]
    return out[0] if single else out


@dataclass
class BAModel:
    A: np.ndarray
    F: np.ndarray

    @classmethod
    def zeros(cls, L: int, D: int) -> "BAModel":
        return cls(np.zeros((L, D + 1)), np.zeros((D, L + 1)))

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @property
    def D(self) -> int:
        return self.F.shape[0]

    @property
    def n_submodels(self) -> int:
        return self.L + self.D

    def encode(self, X) -> np.ndarray:
        return encode(self.A, X)

    def decode(self, Z) -> np.ndarray:
        return decode(self.F, Z)

    def copy(self) -> "BAModel":
        return BAModel(self.A.copy(), self.F.copy())

    # submodel ids: 0..L-1 are hash bits, L..L+D-1 decoder rows
    def get_submodel(self, sid: int) -> np.ndarray:
        return self.A[sid] if sid < self.L else self.F[sid - self.L]

    def set_submodel(self, sid: int, w: np.ndarray) -> None:
        if sid < self.L:
            self.A[sid] = w
        else:
            self.F[sid - self.L] = w

    def same_as(self, other: "BAModel") -> bool:
        return (self.A.shape == other.A.shape and self.F.shape == other.F.shape
                and self.A.tobytes() == other.A.tobytes()
                and self.F.tobytes() == other.F.tobytes())


# ---------------------------------------------------------------- objectives


def _squared_errors(F: np.ndarray, Z: np.ndarray, X: np.ndarray) -> np.ndarray:
    R = X - decode(F, Z)
    return np.einsum("ij,ij->i", R, R)


def e_ba(A: np.ndarray, F: np.ndarray, dataset: Dataset | np.ndarray) -> float:
    """Nested reconstruction error sum_n ||x_n - f(h(x_n))||^2."""
    X = dataset.rows() if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    if X.shape[0] == 0:
        return 0.0
    return float(_squared_errors(F, encode(A, X), X).sum())


def e_q(A: np.ndarray, F: np.ndarray, codes: np.ndarray, mu: float,
        dataset: Dataset | np.ndarray) -> float:
    """Quadratic-penalty objective; the penalty counts Hamming mismatches with h(X)."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    X = dataset.rows() if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    if X.shape[0] == 0:
        return 0.0
    recon = _squared_errors(F, codes, X).sum()
    mismatch = np.count_nonzero(np.asarray(codes, dtype=np.uint8) != encode(A, X))
    return float(recon + mu * mismatch)


# ---------------------------------------------------------------- SGD core


@dataclass
class SgdConfig:
    """Settings for the per-submodel minibatch SGD.

    ``step_size=None`` means probe it on the first ``probe_points`` of the
    shard over the grid ``base_step * 2**k`` for ``k`` in ``probe_exponents``.
    The step in round ``r`` of a W step is ``eta / (1 + decay * r)``.
    """

    epochs: int = 1
    minibatch_size: int = 32
    step_size: float | None = None
    base_step: float = 0.05
    probe_exponents: tuple[int, ...] = tuple(range(-4, 5))
    probe_points: int = 1000
    decay: float = 1.0
    svm_lambda: float = 1e-4
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.svm_lambda < 0:
            raise ValueError("svm_lambda must be nonnegative")

    @property
    def candidate_steps(self) -> list[float]:
        return [self.base_step * 2.0 ** k for k in sorted(self.probe_exponents)]

    def round_step(self, eta0: float, r: int) -> float:
        return eta0 / (1.0 + self.decay * r)


def objective(kind: str, w: np.ndarray, X1: np.ndarray, y: np.ndarray, lam: float = 0.0) -> float:
    """Mean loss of one submodel on augmented inputs ``X1``.

    hinge: lam/2 ||w_nobias||^2 + mean(max(0, 1 - y w.x)); squared: mean((w.x - y)^2) / 2.
    """
    if X1.shape[0] == 0:
        return 0.0
    s = X1 @ w
    if kind == HINGE:
        return float(0.5 * lam * (w[:-1] @ w[:-1]) + np.maximum(0.0, 1.0 - y * s).mean())
    r = s - y
    return float(0.5 * (r @ r) / len(y))


def gradient(kind: str, w: np.ndarray, X1: np.ndarray, y: np.ndarray, lam: float = 0.0) -> np.ndarray:
    n = X1.shape[0]
    s = X1 @ w
    if kind == HINGE:
        active = y * s < 1.0
        g = -(y[active] @ X1[active]) / n
        g[:-1] += lam * w[:-1]
        return g
    return X1.T @ (s - y) / n


def sgd_pass(kind: str, w: np.ndarray, fetch, y: np.ndarray, eta: float,
             minibatch_size: int, order: np.ndarray | None = None, lam: float = 0.0) -> np.ndarray:
    """One pass of minibatch (sub)gradient steps; returns updated weights.

    ``fetch(idx)`` returns the augmented float64 inputs for row indices ``idx``
    so byte-stored features are widened one minibatch at a time.
    """
    n = len(y)
    w = np.array(w, dtype=np.float64, copy=True)
    if order is None:
        order = np.arange(n)
    for start in range(0, n, minibatch_size):
        idx = order[start:start + minibatch_size]
        w -= eta * gradient(kind, w, fetch(idx), y[idx], lam)
    return w


def probe_step_size(kind: str, weights: np.ndarray, X1_head: np.ndarray, y_head: np.ndarray,
                    candidate_steps, minibatch_size: int = 32, lam: float = 0.0) -> float:
    """Pick the candidate step whose trial pass over the probe points ends with lowest loss.

    Ties (and non-finite losses) resolve toward the smaller step.
    """
    steps = sorted(float(s) for s in candidate_steps)
    if not steps:
        raise ValueError("no candidate steps")
    if len(steps) == 1 or X1_head.shape[0] == 0:
        return steps[0]
    best, best_loss = steps[0], np.inf
    fetch = X1_head.__getitem__
    with np.errstate(over="ignore", invalid="ignore"):
        for eta in steps:
            w = sgd_pass(kind, weights, fetch, y_head, eta, minibatch_size, lam=lam)
            loss = objective(kind, w, X1_head, y_head, lam)
            if np.isfinite(loss) and loss < best_loss:
                best, best_loss = eta, loss
    return best


def head_indices(n: int, limit: int = 1000) -> np.ndarray:
    return np.arange(min(n, limit))


def _epoch_order(n: int, cfg: SgdConfig, epoch: int) -> np.ndarray:
    if not cfg.shuffle:
        return np.arange(n)
    return np.random.default_rng([cfg.seed, epoch]).permutation(n)


def _fit(kind, X1, y, weights_in, cfg: SgdConfig) -> np.ndarray:
    w = np.array(weights_in, dtype=np.float64, copy=True)
    lam = cfg.svm_lambda if kind == HINGE else 0.0
    head = head_indices(len(y), cfg.probe_points)
    eta0 = cfg.step_size
    if eta0 is None:
        eta0 = probe_step_size(kind, w, X1[head], y[head], cfg.candidate_steps, cfg.minibatch_size, lam)
    for epoch in range(cfg.epochs):
        w = sgd_pass(kind, w, X1.__getitem__, y, cfg.round_step(eta0, epoch),
                     cfg.minibatch_size, _epoch_order(len(y), cfg, epoch), lam)
    return w


def fit_svm_sgd(shard: Dataset | np.ndarray, bit_labels, weights_in, cfg: SgdConfig) -> np.ndarray:
    """Warm-started hinge-loss SGD for one hash bit; labels in {0,1} map to -1/+1."""
    X = shard.rows() if isinstance(shard, Dataset) else np.asarray(shard, dtype=np.float64)
    y = 2.0 * np.asarray(bit_labels, dtype=np.float64) - 1.0
    return _fit(HINGE, augment(X), y, weights_in, cfg)


def fit_decoder_sgd(shard: Dataset | np.ndarray, codes, weights_in, cfg: SgdConfig) -> np.ndarray:
    """Squared-loss SGD for decoder rows. ``weights_in`` is one row (L+1,) or a full F."""
    X = shard.rows() if isinstance(shard, Dataset) else np.asarray(shard, dtype=np.float64)
    Z1 = augment(codes)
    W = np.atleast_2d(np.asarray(weights_in, dtype=np.float64))
    if W.shape[0] == 1 and X.shape[1] != 1:
        raise ValueError("a single row needs a one-column target; pass the full decoder")
    out = np.vstack([_fit(SQUARED, Z1, X[:, d], W[d], cfg) for d in range(W.shape[0])])
    return out[0] if np.ndim(weights_in) == 1 else out


def fit_decoder_lsq(codes, dataset: Dataset | np.ndarray) -> np.ndarray:
    """Exact least-squares decoder F (D x (L+1)) from codes to data."""
    X = dataset.rows() if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    Z1 = augment(codes)
    G = Z1.T @ Z1
    if np.linalg.matrix_rank(G) < G.shape[0]:
        warnings.warn("singular normal matrix in decoder fit; adding ridge", SingularNormalMatrix,
                      stacklevel=2)
        G = G + RIDGE_EPS * np.eye(G.shape[0])
    return np.linalg.solve(G, Z1.T @ X).T


def hinge_objective(w, X, bit_labels, lam) -> float:
    y = 2.0 * np.asarray(bit_labels, dtype=np.float64) - 1.0
    return objective(HINGE, np.asarray(w, dtype=np.float64), augment(X), y, lam)


# ---------------------------------------------------------------- checkpoint

MAGIC = b"PMAC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_checkpoint(model: BAModel) -> bytes:
    L, D = model.L, model.D
    return (_HEADER.pack(MAGIC, CHECKPOINT_VERSION, L, D)
            + np.ascontiguousarray(model.A, dtype="<f8").tobytes()
            + np.ascontiguousarray(model.F, dtype="<f8").tobytes())


def load_checkpoint(blob: bytes) -> BAModel:
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint shorter than its header")
    magic, version, L, D = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    na, nf = L * (D + 1), D * (L + 1)
    if len(blob) - _HEADER.size != 8 * (na + nf):
        raise CheckpointError("checkpoint body has the wrong length")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    A = body[:na].reshape(L, D + 1).astype(np.float64)
    F = body[na:].reshape(D, L + 1).astype(np.float64)
    return BAModel(A, F)
