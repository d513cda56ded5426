"""Serial method-of-auxiliary-coordinates training for the binary autoencoder.

The per-point Z solvers are vectorised over points; every point is solved
independently, so a batch call returns exactly what per-point calls would.
The W-step visit trainer (:class:`ShardTrainer`) and the outer loop
(:func:`run_mac_loop`) are shared with the distributed runtime so that a
one-machine ring reproduces the serial run bit for bit.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import BYTE, Dataset, pca_hash, train_validation_split
from .errors import LTooLarge
from .evaluation import RetrievalEvaluator
from .model import (HINGE, RIDGE_EPS, SQUARED, BAModel, SgdConfig, augment, decode, e_ba,
                    e_q, encode, fit_decoder_lsq, fit_svm_sgd, head_indices,
                    probe_step_size, sgd_pass)

log = logging.getLogger(__name__)

MAX_ENUM_BITS = 20
ENUMERATE = "enumerate"
ALTERNATE = "alternate"
Z_MODES = (ENUMERATE, ALTERNATE)


# ---------------------------------------------------------------- Z step


def z_objective(X: np.ndarray, hx: np.ndarray, F: np.ndarray, mu: float, Z: np.ndarray) -> np.ndarray:
    """Per-point ||x - f(z)||^2 + mu * hamming(z, h(x))."""
    R = np.atleast_2d(X) - decode(F, np.atleast_2d(Z))
    ham = np.count_nonzero(np.atleast_2d(Z) != np.atleast_2d(hx), axis=1)
    return np.einsum("ij,ij->i", R, R) + mu * ham


def all_codes(L: int) -> np.ndarray:
    """All 2^L codes in lexicographic order (first bit most significant)."""
    idx = np.arange(2 ** L)
    shifts = np.arange(L - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def _code_index(Z: np.ndarray) -> np.ndarray:
    L = Z.shape[1]
    return Z.astype(np.int64) @ (1 << np.arange(L - 1, -1, -1, dtype=np.int64))


def enumerate_codes(X, HX, F, mu: float, chunk_elems: int = 1 << 22) -> np.ndarray:
    """Exact per-point minimiser over all 2^L codes.

    Ties go to the code nearest h(x) in Hamming distance, then to the
    lexicographically smallest code.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    HX = np.atleast_2d(HX).astype(np.uint8)
    L = F.shape[1] - 1
    if L > MAX_ENUM_BITS:
        raise LTooLarge(f"enumeration over 2^{L} codes refused (limit {MAX_ENUM_BITS} bits)")
    C = all_codes(L)
    recon = decode(F, C)                      # 2^L x D
    n_codes = C.shape[0]
    hx_idx = _code_index(HX)
    out = np.empty((X.shape[0], L), dtype=np.uint8)
    step = max(1, chunk_elems // max(1, n_codes * X.shape[1]))
    code_ids = np.arange(n_codes, dtype=np.int64)
    for s in range(0, X.shape[0], step):
        xs = X[s:s + step]
        diff = xs[:, None, :] - recon[None, :, :]
        cost = np.einsum("ncd,ncd->nc", diff, diff)
        ham = np.bitwise_count(code_ids[None, :] ^ hx_idx[s:s + step, None]).astype(np.int64)
        cost = cost + mu * ham
        best = cost.min(axis=1, keepdims=True)
        key = np.where(cost == best, ham * n_codes + code_ids[None, :], np.iinfo(np.int64).max)
        out[s:s + step] = C[np.argmin(key, axis=1)]
    return out


def relaxed_codes(X, HX, F, mu: float) -> np.ndarray:
    """Solve the box-free quadratic relaxation, clip to [0,1] and threshold at 0.5."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    HX = np.atleast_2d(HX).astype(np.uint8)
    L = F.shape[1] - 1
    Fz, b = F[:, :L], F[:, L]
    G = Fz.T @ Fz + mu * np.eye(L)
    if np.linalg.matrix_rank(G) < L:
        G = G + RIDGE_EPS * np.eye(L)
    rhs = (X - b) @ Fz + mu * HX
    try:
        Zr = np.linalg.solve(G, rhs.T).T
    except np.linalg.LinAlgError:
        return HX.copy()
    bad = ~np.all(np.isfinite(Zr), axis=1)
    out = (np.clip(Zr, 0.0, 1.0) >= 0.5).astype(np.uint8)
    out[bad] = HX[bad]
    return out


def alternate_codes(X, HX, F, mu: float, Z_init) -> np.ndarray:
    """Cyclic single-bit descent: flip a bit only on strict decrease; stop after a quiet sweep."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    HX = np.atleast_2d(HX).astype(np.uint8)
    Z = np.atleast_2d(Z_init).astype(np.uint8).copy()
    L = Z.shape[1]
    cost = z_objective(X, HX, F, mu, Z)
    active = np.arange(X.shape[0])
    while active.size:
        flipped_any = np.zeros(active.size, dtype=bool)
        for l in range(L):
            Zf = Z[active].copy()
            Zf[:, l] ^= 1
            new = z_objective(X[active], HX[active], F, mu, Zf)
            better = new < cost[active]
            if better.any():
                rows = active[better]
                Z[rows] = Zf[better]
                cost[rows] = new[better]
                flipped_any |= better
        active = active[flipped_any]
    return Z


def z_step_enumerate(x, hx, F, mu: float) -> np.ndarray:
    return enumerate_codes(x, hx, F, mu)[0]


def z_step_relaxed_init(x, hx, F, mu: float) -> np.ndarray:
    return relaxed_codes(x, hx, F, mu)[0]


def z_step_alternate(x, hx, F, mu: float, z_init) -> np.ndarray:
    return alternate_codes(x, hx, F, mu, z_init)[0]


def z_step(dataset: Dataset | np.ndarray, A: np.ndarray, F: np.ndarray, mu: float,
           mode: str = ENUMERATE, prev_codes=None) -> np.ndarray:
    """Update every point's code independently.

    In ``alternate`` mode the relaxed solution seeds the bit descent and a
    point keeps its previous code when that code has strictly lower objective.
    """
    X = dataset.rows() if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if X.shape[0] == 0:
        return np.zeros((0, F.shape[1] - 1), dtype=np.uint8)
    HX = encode(A, X)
    if mode == ENUMERATE:
        return enumerate_codes(X, HX, F, mu)
    if mode != ALTERNATE:
        raise ValueError(f"unknown Z mode {mode!r}")
    Z = alternate_codes(X, HX, F, mu, relaxed_codes(X, HX, F, mu))
    if prev_codes is not None:
        prev = np.asarray(prev_codes, dtype=np.uint8)
        keep = z_objective(X, HX, F, mu, prev) < z_objective(X, HX, F, mu, Z)
        Z[keep] = prev[keep]
    return Z


# ---------------------------------------------------------------- schedule & record


@dataclass
class MuSchedule:
    mu0: float
    factor: float
    max_iters: int

    def __post_init__(self):
        if self.mu0 <= 0 or self.factor <= 1 or self.max_iters < 1:
            raise ValueError("need mu0 > 0, factor > 1, max_iters >= 1")

    def value(self, i: int) -> float:
        if not 0 <= i < self.max_iters:
            raise IndexError(f"iteration {i} outside schedule of length {self.max_iters}")
        return self.mu0 * self.factor ** i

    def values(self) -> list[float]:
        return [self.value(i) for i in range(self.max_iters)]


def mu_schedule_value(schedule: MuSchedule, i: int) -> float:
    return schedule.value(i)


CIFAR_SCHEDULE = MuSchedule(0.005, 1.2, 26)
SIFT_SCHEDULE = MuSchedule(1e-6, 2.0, 20)
SIFT1B_SCHEDULE = MuSchedule(1e-4, 2.0, 10)

CSV_COLUMNS = ("iter", "mu", "EQ", "EBA", "val_precision", "seconds", "codes_changed")


@dataclass
class RunRecord:
    """Learning curves, one entry per executed iteration.

    ``eq_before_w``/``eq_after_w`` hold the penalty objective at the current
    mu before and after the W step (NaN when no earlier model exists); ``eq``
    is the value after the Z step.
    """

    mu: list[float] = field(default_factory=list)
    eq: list[float] = field(default_factory=list)
    eba: list[float] = field(default_factory=list)
    val_precision: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    codes_changed: list[int] = field(default_factory=list)
    eq_before_w: list[float] = field(default_factory=list)
    eq_after_w: list[float] = field(default_factory=list)
    initial_precision: float = float("nan")
    best_iteration: int = -1
    stop_reason: str = ""
    log: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.mu)

    def rows(self, include_seconds: bool = True) -> list[tuple]:
        out = []
        for i in range(len(self)):
            row = (i, self.mu[i], self.eq[i], self.eba[i], self.val_precision[i],
                   self.seconds[i] if include_seconds else 0.0, self.codes_changed[i])
            out.append(row)
        return out

    def to_csv(self, include_seconds: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows(include_seconds):
            w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), repr(r[4]), repr(r[5]), r[6]])
        return buf.getvalue()

    def deterministic_equal(self, other: "RunRecord") -> bool:
        """Field-by-field equality excluding wall-clock seconds."""
        def same(a, b):
            return np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float), equal_nan=True)
        return (same(self.mu, other.mu) and same(self.eq, other.eq) and same(self.eba, other.eba)
                and same(self.val_precision, other.val_precision)
                and self.codes_changed == other.codes_changed
                and same(self.eq_before_w, other.eq_before_w)
                and same(self.eq_after_w, other.eq_after_w)
                and same([self.initial_precision], [other.initial_precision])
                and self.best_iteration == other.best_iteration
                and self.stop_reason == other.stop_reason)


# ---------------------------------------------------------------- W-step visits


def submodel_kind(sid: int, L: int) -> str:
    return HINGE if sid < L else SQUARED


class ShardTrainer:
    """Trains circulating submodels on one machine's points.

    Encoder inputs are [x; 1] and labels are +-1 from the current codes;
    decoder-row inputs are [z; 1] with targets from the matching data column.
    The step size for each submodel is probed once per W step, at its first
    visit, on the first ``probe_points`` points.
    """

    def __init__(self, dataset: Dataset, codes: np.ndarray, cfg: SgdConfig, shard_id: int):
        self.dataset = dataset
        self.codes = np.asarray(codes, dtype=np.uint8)
        self.cfg = cfg
        self.shard_id = shard_id
        self._X1 = None if dataset.storage_kind == BYTE else augment(dataset.rows())
        self.refresh_codes(self.codes)
        self.iteration = 0
        self._eta: dict[int, float] = {}

    @property
    def n(self) -> int:
        return self.dataset.n_points

    def refresh_codes(self, codes) -> None:
        self.codes = np.asarray(codes, dtype=np.uint8)
        self._Z1 = augment(self.codes)
        self._y = 2.0 * self.codes.astype(np.float64) - 1.0

    def begin_wstep(self, iteration: int) -> None:
        self.iteration = iteration
        self._eta.clear()

    def _fetch_x(self, idx):
        if self._X1 is not None:
            return self._X1[idx]
        return augment(self.dataset.rows(idx))

    def _problem(self, sid: int):
        L = self.codes.shape[1]
        if sid < L:
            return HINGE, self._fetch_x, self._y[:, sid], self.cfg.svm_lambda
        col = self.dataset.values[:, sid - L].astype(np.float64)
        if self.dataset.storage_kind == BYTE and self.dataset.scale != 1.0:
            col *= self.dataset.scale
        return SQUARED, self._Z1.__getitem__, col, 0.0

    def step_for(self, sid: int, w: np.ndarray) -> float:
        if self.cfg.step_size is not None:
            return self.cfg.step_size
        if sid not in self._eta:
            kind, fetch, y, lam = self._problem(sid)
            head = head_indices(self.n, self.cfg.probe_points)
            self._eta[sid] = probe_step_size(kind, w, fetch(head), y[head], self.cfg.candidate_steps,
                                             self.cfg.minibatch_size, lam)
        return self._eta[sid]

    def order(self, sid: int, round_idx: int, pass_idx: int) -> np.ndarray:
        if not self.cfg.shuffle:
            return np.arange(self.n)
        rng = np.random.default_rng([self.cfg.seed, self.iteration, sid, self.shard_id, round_idx, pass_idx])
        return rng.permutation(self.n)

    def train(self, sid: int, w: np.ndarray, round_idx: int = 0, passes: int = 1) -> np.ndarray:
        if self.n == 0:
            return np.array(w, dtype=np.float64, copy=True)
        kind, fetch, y, lam = self._problem(sid)
        eta = self.cfg.round_step(self.step_for(sid, w), round_idx)
        for p in range(passes):
            w = sgd_pass(kind, w, fetch, y, eta, self.cfg.minibatch_size,
                         self.order(sid, round_idx, p), lam)
        return w


# ---------------------------------------------------------------- outer loop


@dataclass
class EvalConfig:
    K_true: int = 20
    k_retrieved: int = 20


def _precision_of(evaluator, A) -> float:
    return evaluator.precision(A) if evaluator is not None else float("nan")


def run_mac_loop(backend, schedule: MuSchedule, evaluator, z_mode: str,
                 init_model: BAModel | None, early_stopping: bool = True):
    """Drive W/Z alternation over the mu schedule.

    ``backend`` supplies ``w_step(i, model)``, ``z_step(model, mu, mode)``
    (returning the number of points whose code changed), ``penalty(model, mu)``,
    ``reconstruction(model)`` and ``codes_match(model)``. Returns the best
    model by validation precision (initial model included) and the record.
    """
    if z_mode not in Z_MODES:
        raise ValueError(f"unknown Z mode {z_mode!r}")
    rec = RunRecord()
    model = init_model.copy() if init_model is not None else backend.initial_model()
    has_prev = init_model is not None
    best_model, best_prec = None, -np.inf
    if init_model is not None:
        rec.initial_precision = _precision_of(evaluator, init_model.A)
        best_model, best_prec = init_model.copy(), rec.initial_precision
    prev_prec = rec.initial_precision
    rec.stop_reason = "schedule exhausted"
    for i in range(schedule.max_iters):
        t0 = time.perf_counter()
        mu = schedule.value(i)
        rec.eq_before_w.append(backend.penalty(model, mu) if has_prev else float("nan"))
        model = backend.w_step(i, model)
        has_prev = True
        rec.eq_after_w.append(backend.penalty(model, mu))
        changed = backend.z_step(model, mu, z_mode)
        rec.mu.append(mu)
        rec.eq.append(backend.penalty(model, mu))
        rec.eba.append(backend.reconstruction(model))
        prec = _precision_of(evaluator, model.A)
        rec.val_precision.append(prec)
        rec.codes_changed.append(int(changed))
        rec.seconds.append(time.perf_counter() - t0)
        if best_model is None or prec > best_prec:
            best_model, best_prec, rec.best_iteration = model.copy(), prec, i
        if changed == 0 and backend.codes_match(model):
            rec.stop_reason = "codes stable and equal to h(X)"
            break
        if early_stopping and evaluator is not None and np.isfinite(prev_prec) and prec < prev_prec:
            rec.stop_reason = "validation precision decreased"
            break
        prev_prec = prec
    return best_model, rec


class SerialBackend:
    """Whole dataset on one machine.

    ``w_mode='sgd'`` trains every submodel with the same visit trainer the
    distributed runtime uses. ``w_mode='exact'`` fits the decoder in closed
    form and trains each hash bit for ``exact_epochs`` epochs, keeping the
    previous bit when the new one disagrees with more codes.
    """

    def __init__(self, dataset: Dataset, codes: np.ndarray, cfg: SgdConfig,
                 w_mode: str = "sgd", exact_epochs: int = 30):
        if w_mode not in ("sgd", "exact"):
            raise ValueError(f"unknown W mode {w_mode!r}")
        self.dataset = dataset
        self.X = dataset.rows()
        self.codes = np.asarray(codes, dtype=np.uint8).copy()
        self.cfg = cfg
        self.w_mode = w_mode
        self.exact_epochs = exact_epochs
        self.trainer = ShardTrainer(dataset, self.codes, cfg, shard_id=0)

    def initial_model(self) -> BAModel:
        return BAModel.zeros(self.codes.shape[1], self.dataset.dim)

    def w_step(self, iteration: int, model: BAModel) -> BAModel:
        new = model.copy()
        L = self.codes.shape[1]
        if self.w_mode == "exact":
            ecfg = SgdConfig(**{**self.cfg.__dict__, "epochs": self.exact_epochs,
                                "seed": self.cfg.seed + 7919 * iteration})
            for l in range(L):
                w = fit_svm_sgd(self.X, self.codes[:, l], model.A[l], ecfg)
                old_miss = np.count_nonzero(encode(model.A[l:l + 1], self.X)[:, 0] != self.codes[:, l])
                new_miss = np.count_nonzero(encode(w[None, :], self.X)[:, 0] != self.codes[:, l])
                if new_miss <= old_miss:
                    new.A[l] = w
            new.F = fit_decoder_lsq(self.codes, self.X)
            return new
        self.trainer.refresh_codes(self.codes)
        self.trainer.begin_wstep(iteration)
        for sid in range(new.n_submodels):
            w = new.get_submodel(sid)
            for r in range(self.cfg.epochs):
                w = self.trainer.train(sid, w, round_idx=r)
            new.set_submodel(sid, w)
        return new

    def z_step(self, model: BAModel, mu: float, mode: str) -> int:
        Z = z_step(self.X, model.A, model.F, mu, mode, prev_codes=self.codes)
        changed = int(np.count_nonzero(np.any(Z != self.codes, axis=1)))
        self.codes = Z
        return changed

    def penalty(self, model: BAModel, mu: float) -> float:
        return e_q(model.A, model.F, self.codes, mu, self.X)

    def reconstruction(self, model: BAModel) -> float:
        return e_ba(model.A, model.F, self.X)

    def codes_match(self, model: BAModel) -> bool:
        return bool(np.array_equal(self.codes, encode(model.A, self.X)))


def initial_model_from_pca(dataset: Dataset, L: int, subset_size: int | None = None, seed: int = 0):
    """PCA hash plus the least-squares decoder for its codes."""
    res = pca_hash(dataset, L, subset_size, seed)
    F = fit_decoder_lsq(res.codes, dataset)
    return res.codes, BAModel(res.encoder.copy(), F), res


def mac_train(dataset: Dataset, validation: Dataset | None, L: int, schedule: MuSchedule,
              sgd_config: SgdConfig, z_mode: str = ENUMERATE, init_codes=None,
              init_model: BAModel | None = None, w_mode: str = "sgd",
              eval_config: EvalConfig | None = None, early_stopping: bool = True,
              split_seed: int = 0, pca_subset: int | None = None):
    """Serial MAC for a binary autoencoder.

    Without explicit ``init_codes`` the codes and the starting model come from
    truncated PCA. Without a validation set, 10% of ``dataset`` is held out.
    Returns ``(model, record)`` where model is the best by validation precision.
    """
    if validation is None:
        dataset, validation = train_validation_split(dataset, 0.1, split_seed)
    if init_codes is None:
        init_codes, pca_model, res = initial_model_from_pca(dataset, L, pca_subset, sgd_config.seed)
        if init_model is None:
            init_model = pca_model
        pca_log = res.log
    else:
        pca_log = []
    eval_config = eval_config or EvalConfig()
    evaluator = RetrievalEvaluator(validation, None, eval_config.K_true, eval_config.k_retrieved)
    backend = SerialBackend(dataset, init_codes, sgd_config, w_mode)
    model, rec = run_mac_loop(backend, schedule, evaluator, z_mode, init_model, early_stopping)
    rec.log.extend(pca_log)
    return model, rec
