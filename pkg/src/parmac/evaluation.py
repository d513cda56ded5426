"""Retrieval metrics: Euclidean ground truth, Hamming ranking, precision and recall@R."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import KExceedsBase


@dataclass
class MetricConfig:
    K_true: int = 100
    k_retrieved: int = 100
    R_list: tuple[int, ...] = (1, 10, 100)

    def __post_init__(self):
        if self.K_true < 1 or self.k_retrieved < 1:
            raise ValueError("K_true and k_retrieved must be >= 1")


def _rows(x) -> np.ndarray:
    if isinstance(x, Dataset):
        return x.rows()
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def squared_distances(queries, base, chunk: int = 256) -> np.ndarray:
    Q, B = _rows(queries), _rows(base)
    if Q.shape[1] != B.shape[1]:
        raise ValueError("query and base dimensions differ")
    out = np.empty((Q.shape[0], B.shape[0]))
    for s in range(0, Q.shape[0], chunk):
        diff = Q[s:s + chunk, None, :] - B[None, :, :]
        out[s:s + chunk] = np.einsum("qnd,qnd->qn", diff, diff)
    return out


def ground_truth_knn(base, queries, K: int, exclude=None) -> np.ndarray:
    """Exact Euclidean K nearest base indices per query, ties by ascending index.

    ``exclude[q]`` (optional) is a base index removed from query q's candidates,
    used when the queries are drawn from the base itself.
    """
    B = _rows(base)
    n_avail = B.shape[0] - (0 if exclude is None else 1)
    if K > n_avail:
        raise KExceedsBase(f"K={K} exceeds {n_avail} available base points")
    d = squared_distances(queries, B)
    if exclude is not None:
        d[np.arange(d.shape[0]), np.asarray(exclude)] = np.inf
    return np.argsort(d, axis=1, kind="stable")[:, :K]


def pack_codes(codes) -> np.ndarray:
    return np.packbits(np.asarray(codes, dtype=np.uint8), axis=-1)


def hamming_distances(base_codes, query_codes) -> np.ndarray:
    """Q x N Hamming distances via packed bytes and popcount."""
    b = pack_codes(np.atleast_2d(base_codes))
    q = pack_codes(np.atleast_2d(query_codes))
    if b.shape[1] != q.shape[1]:
        raise ValueError("code lengths differ")
    return np.bitwise_count(q[:, None, :] ^ b[None, :, :]).sum(axis=2, dtype=np.int64)


def hamming_search(codes_base, code_query, k: int, exclude=None) -> np.ndarray:
    """Indices of the k closest base codes (ties by ascending index); one query or many."""
    single = np.ndim(code_query) == 1
    dist = hamming_distances(codes_base, code_query)
    if exclude is not None:
        dist[np.arange(dist.shape[0]), np.atleast_1d(exclude)] = np.iinfo(np.int64).max
    ranked = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return ranked[0] if single else ranked


def precision(ground_truth, retrieved) -> float:
    """Mean over queries of |retrieved & true| / k, as a percentage."""
    gt = np.asarray(ground_truth)
    ret = np.asarray(retrieved)
    if gt.shape[0] != ret.shape[0]:
        raise ValueError("ground truth and retrieved lists cover different queries")
    if gt.shape[0] == 0:
        return 0.0
    k = ret.shape[1]
    hits = [len(np.intersect1d(g, r, assume_unique=True)) for g, r in zip(gt, ret)]
    return float(100.0 * np.mean(np.asarray(hits) / k))


def true_nn_ranks(nn1, hamming_dist) -> np.ndarray:
    """1-based rank of each query's true nearest neighbour in Hamming order.

    Ties are resolved in the query's favour: the rank counts only base points
    strictly closer than the true neighbour.
    """
    hd = np.atleast_2d(hamming_dist)
    nn1 = np.asarray(nn1).reshape(-1)
    d_nn = hd[np.arange(hd.shape[0]), nn1]
    return 1 + (hd < d_nn[:, None]).sum(axis=1)


def recall_at_r(nn1, hamming_dist, R: int) -> float:
    """Fraction of queries whose true nearest neighbour ranks within the top R."""
    if R < 1:
        raise ValueError("R must be >= 1")
    ranks = true_nn_ranks(nn1, hamming_dist)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= R))


class RetrievalEvaluator:
    """Precision of a hash function on a fixed query/base pair.

    With ``base=None`` the queries retrieve among themselves, excluding
    each query's own entry.
    """

    def __init__(self, queries, base=None, K_true: int = 20, k_retrieved: int = 20):
        self.queries = _rows(queries)
        self.self_retrieval = base is None
        self.base = self.queries if base is None else _rows(base)
        self.k = k_retrieved
        self.exclude = np.arange(self.queries.shape[0]) if self.self_retrieval else None
        self.ground_truth = ground_truth_knn(self.base, self.queries, K_true, self.exclude)

    def precision(self, A: np.ndarray) -> float:
        from .model import encode
        qc = encode(A, self.queries)
        bc = qc if self.self_retrieval else encode(A, self.base)
        return precision(self.ground_truth, hamming_search(bc, qc, self.k, self.exclude))
