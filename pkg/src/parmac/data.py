"""Dataset ingestion, partitioning, PCA code initialisation and RBF features.

The texmex ``.fvecs``/``.bvecs`` layout is a sequence of records, each an
int32 little-endian dimension followed by that many float32 (fvecs) or uint8
(bvecs) values.
"""

from __future__ import annotations

import io
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import DegenerateCovariance, EmptyShard, InconsistentDim, MalformedRecord

log = logging.getLogger(__name__)

REAL64 = "real64"
BYTE = "byte"


@dataclass
class Dataset:
    """Dense N x D feature matrix.

    Byte datasets keep their uint8 storage; ``rows`` widens to float64 on
    demand, multiplying by ``scale`` (1 for raw bvecs, 1/255 for quantised
    kernel values).
    """

    values: np.ndarray
    storage_kind: str = REAL64
    scale: float = 1.0

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("dataset values must be a 2-D array")
        if self.storage_kind == BYTE:
            if self.values.dtype != np.uint8:
                raise ValueError("byte storage requires uint8 values")
        elif self.storage_kind == REAL64:
            self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        else:
            raise ValueError(f"unknown storage kind {self.storage_kind!r}")

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def rows(self, idx=None) -> np.ndarray:
        v = self.values if idx is None else self.values[idx]
        if self.storage_kind == BYTE:
            out = v.astype(np.float64)
            if self.scale != 1.0:
                out *= self.scale
            return out
        return v

    def subset(self, idx) -> "Dataset":
        return Dataset(self.values[idx], self.storage_kind, self.scale)

    def __len__(self):
        return self.n_points


# ---------------------------------------------------------------- vecs I/O


def _read_vecs(stream: BinaryIO, dtype, itemsize: int) -> tuple[list[np.ndarray], int]:
    records = []
    dim = None
    while True:
        head = stream.read(4)
        if not head:
            break
        if len(head) < 4:
            raise MalformedRecord("truncated dimension header")
        (d,) = struct.unpack("<i", head)
        if d < 0:
            raise MalformedRecord(f"negative dimension {d}")
        if dim is None:
            dim = d
        elif d != dim:
            raise InconsistentDim(f"record {len(records)} has dim {d}, expected {dim}")
        payload = stream.read(d * itemsize)
        if len(payload) != d * itemsize:
            raise MalformedRecord(f"record {len(records)} truncated")
        records.append(np.frombuffer(payload, dtype=dtype))
    return records, (dim or 0)


def _as_stream(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    if isinstance(source, (str, Path)):
        return open(source, "rb")
    return source


def read_fvecs(source) -> Dataset:
    """Read an fvecs stream (bytes, path or binary file); floats are widened to float64."""
    stream = _as_stream(source)
    try:
        records, dim = _read_vecs(stream, np.dtype("<f4"), 4)
    finally:
        if isinstance(source, (str, Path)):
            stream.close()
    if not records:
        return Dataset(np.zeros((0, dim)))
    return Dataset(np.vstack(records).astype(np.float64))


def read_bvecs(source) -> Dataset:
    stream = _as_stream(source)
    try:
        records, dim = _read_vecs(stream, np.uint8, 1)
    finally:
        if isinstance(source, (str, Path)):
            stream.close()
    if not records:
        return Dataset(np.zeros((0, dim), dtype=np.uint8), BYTE)
    return Dataset(np.vstack(records), BYTE)


def _write_vecs(values: np.ndarray, dtype) -> bytes:
    n, d = values.shape
    buf = io.BytesIO()
    head = struct.pack("<i", d)
    body = np.ascontiguousarray(values, dtype=dtype)
    for i in range(n):
        buf.write(head)
        buf.write(body[i].tobytes())
    return buf.getvalue()


def write_fvecs(dataset: Dataset | np.ndarray) -> bytes:
    values = dataset.rows() if isinstance(dataset, Dataset) else np.asarray(dataset)
    return _write_vecs(values, np.dtype("<f4"))


def write_bvecs(dataset: Dataset | np.ndarray) -> bytes:
    values = dataset.values if isinstance(dataset, Dataset) else np.asarray(dataset)
    if values.dtype != np.uint8:
        if np.any(values < 0) or np.any(values > 255):
            raise ValueError("bvecs values must lie in [0, 255]")
        values = values.astype(np.uint8)
    return _write_vecs(values, np.uint8)


# ---------------------------------------------------------------- synthetic


def generate_synthetic(n: int, d: int, n_clusters: int, seed: int,
                       spread: float = 1.0, separation: float = 5.0) -> Dataset:
    """Sample a Gaussian mixture; cluster means are drawn with scale ``separation``."""
    if n < 1 or d < 1 or n_clusters < 1:
        raise ValueError("n, d and n_clusters must all be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=separation, size=(n_clusters, d))
    labels = rng.integers(0, n_clusters, size=n)
    x = means[labels] + rng.normal(scale=spread, size=(n, d))
    return Dataset(x)


def synthetic_means(d: int, n_clusters: int, seed: int, separation: float = 5.0) -> np.ndarray:
    """Cluster means used by :func:`generate_synthetic` for the same seed."""
    rng = np.random.default_rng(seed)
    return rng.normal(scale=separation, size=(n_clusters, d))


def train_validation_split(dataset: Dataset, fraction: float = 0.1, seed: int = 0):
    """Hold out ``fraction`` of the points (seeded) as a validation set."""
    n = dataset.n_points
    n_val = max(1, int(round(n * fraction)))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx)


# ---------------------------------------------------------------- partition


@dataclass
class Partition:
    shard_index_sets: list[np.ndarray]
    speeds: np.ndarray

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shard_index_sets]


def partition(n: int, speeds: Sequence[float]) -> Partition:
    """Split ``range(n)`` into contiguous shards sized proportionally to ``speeds``.

    Sizes use largest-remainder rounding; remainder ties go to the lower
    machine index.
    """
    alpha = np.asarray(speeds, dtype=np.float64)
    P = len(alpha)
    if P == 0 or np.any(alpha <= 0):
        raise ValueError("speeds must be nonempty and positive")
    if n < P:
        raise ValueError(f"need n >= P, got n={n}, P={P}")
    ideal = n * alpha / alpha.sum()
    sizes = np.floor(ideal).astype(int)
    short = n - sizes.sum()
    order = sorted(range(P), key=lambda p: (-(ideal[p] - sizes[p]), p))
    for p in order[:short]:
        sizes[p] += 1
    if np.any(sizes == 0):
        raise EmptyShard(f"a machine received no points: sizes={sizes.tolist()}")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = [np.arange(bounds[p], bounds[p + 1]) for p in range(P)]
    return Partition(shards, alpha)


# ---------------------------------------------------------------- PCA


@dataclass
class PCAResult:
    codes: np.ndarray
    encoder: np.ndarray          # L x (D+1), usable as an Encoder matrix
    eigenvalues: np.ndarray
    degenerate_bits: int = 0
    log: list[str] = field(default_factory=list)


def _orient(vecs: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude component positive
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            vecs[:, j] = -col
    return vecs


def pca_hash(dataset: Dataset, L: int, subset_size: int | None = None, seed: int = 0) -> PCAResult:
    """Fit a truncated-PCA hash on a seeded subset and apply it to every point."""
    N, D = dataset.n_points, dataset.dim
    if L > D:
        raise ValueError(f"L={L} exceeds D={D}")
    if subset_size is None:
        subset_size = N
    if subset_size > N or subset_size < 1:
        raise ValueError("subset_size must be in [1, N]")
    idx = np.random.default_rng(seed).permutation(N)[:subset_size]
    sub = dataset.rows(np.sort(idx))
    mean = sub.mean(axis=0)
    centred = sub - mean
    cov = centred.T @ centred / subset_size
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], _orient(evecs[:, order].copy())
    tol = 1e-12 * max(1.0, float(abs(evals[0]))) if D else 0.0
    usable = int(np.sum(evals[:L] > tol))
    A = np.zeros((L, D + 1))
    A[:usable, :D] = evecs[:, :usable].T
    A[:usable, D] = -A[:usable, :D] @ mean
    notes = []
    if usable < L:
        # constant-zero bits: zero weights with a negative bias
        A[usable:, D] = -1.0
        msg = f"covariance has {usable} nonzero eigenvalues for L={L}; padded {L - usable} zero bits"
        notes.append(msg)
        log.warning(msg)
        warnings.warn(msg, DegenerateCovariance, stacklevel=2)
    X = dataset.rows()
    codes = (X @ A[:, :D].T + A[:, D] >= 0).astype(np.uint8)
    return PCAResult(codes, A, evals[:L], L - usable, notes)


def pca_init(dataset: Dataset, L: int, subset_size: int | None = None, seed: int = 0) -> np.ndarray:
    """Binary codes from the top-L principal projections, thresholded at 0 after centring."""
    return pca_hash(dataset, L, subset_size, seed).codes


# ---------------------------------------------------------------- RBF features


@dataclass
class KernelConfig:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def m(self) -> int:
        return self.centers.shape[0]


def sample_centers(dataset: Dataset, m: int, bandwidth: float, seed: int = 0) -> KernelConfig:
    """Pick ``m`` distinct training points (without replacement) as RBF centres."""
    if m < 1 or m > dataset.n_points:
        raise ValueError("need 1 <= m <= N centres")
    idx = np.random.default_rng(seed).choice(dataset.n_points, size=m, replace=False)
    return KernelConfig(dataset.rows(np.sort(idx)), bandwidth)


def _rbf_bytes(X: np.ndarray, config: KernelConfig) -> np.ndarray:
    sq = ((X[:, None, :] - config.centers[None, :, :]) ** 2).sum(axis=2)
    k = np.exp(-sq / (2.0 * config.bandwidth ** 2))
    return np.rint(255.0 * k).astype(np.uint8)


def rbf_featurize(x, config: KernelConfig) -> np.ndarray:
    """Gaussian kernel values to every centre, quantised to one byte each."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.centers.shape[1]:
        raise ValueError("x dimension does not match the centres")
    return _rbf_bytes(x.reshape(1, -1), config)[0]


def rbf_dataset(dataset: Dataset, config: KernelConfig, chunk: int = 4096) -> Dataset:
    """Featurise a whole dataset; decoded values are byte/255."""
    out = np.empty((dataset.n_points, config.m), dtype=np.uint8)
    for start in range(0, dataset.n_points, chunk):
        sl = slice(start, start + chunk)
        out[sl] = _rbf_bytes(dataset.rows(sl), config)
    return Dataset(out, BYTE, scale=1.0 / 255.0)
