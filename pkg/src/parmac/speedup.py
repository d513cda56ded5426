"""Closed-form runtime and parallel speedup of the circulating W step plus local Z step.

Times are in arbitrary consistent units. ``P`` may be a positive real for
the analysis helpers; runtime predictions use it as a machine count.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DecoderSmallerThanEncoder, NotDivisible

_CEIL_TOL = 1e-12


@dataclass(frozen=True)
class SpeedupParams:
    P: float
    N: int
    M: int
    e: int
    t_w_r: float
    t_w_c: float
    t_z_r: float

    def __post_init__(self):
        if self.P < 1 or self.N < 1 or self.M < 1 or self.e < 1:
            raise ValueError("P, N, M and e must be >= 1")
        if self.t_w_r <= 0 or self.t_z_r <= 0 or self.t_w_c < 0:
            raise ValueError("compute times must be > 0 and t_w_c >= 0")

    def with_(self, **kw) -> "SpeedupParams":
        return replace(self, **kw)


REFERENCE_PARAMS = SpeedupParams(P=1, N=10**6, M=512, e=1, t_w_r=1.0, t_w_c=1e3, t_z_r=5.0)


@dataclass(frozen=True)
class Ratios:
    rho1: float
    rho2: float
    rho: float

    def primed(self, N: int) -> "Ratios":
        return Ratios(self.rho1 * N, self.rho2 * N, self.rho * N)


def ratios(p: SpeedupParams) -> Ratios:
    if p.t_w_c == 0:
        return Ratios(math.inf, math.inf, math.inf)
    denom = (p.e + 1) * p.t_w_c
    rho1 = p.t_z_r / denom
    rho2 = p.e * p.t_w_r / denom
    return Ratios(rho1, rho2, rho1 + rho2)


def ceil_ratio(M, P):
    """ceil(M/P), treating quotients within 1e-12 of an integer as that integer.

    Without the tolerance, P = M/k computed in floating point can land just
    below M/k and flip the ceiling to k+1.
    """
    q = np.asarray(M, dtype=np.float64) / np.asarray(P, dtype=np.float64)
    r = np.rint(q)
    out = np.where(np.abs(q - r) <= _CEIL_TOL * np.maximum(1.0, q), r, np.ceil(q))
    return out.astype(np.int64) if out.ndim else int(out)


# ---------------------------------------------------------------- runtimes


def runtime_z(p: SpeedupParams) -> float:
    return p.M * (p.N / p.P) * p.t_z_r


def runtime_w(p: SpeedupParams) -> float:
    k = ceil_ratio(p.M, p.P)
    return k * (p.t_w_r * p.N / p.P + p.t_w_c) * p.P * p.e + k * p.t_w_c * p.P


def runtime_total(p: SpeedupParams) -> float:
    return runtime_z(p) + runtime_w(p)


def runtime_serial(p: SpeedupParams) -> float:
    """T(1): one machine, nothing to communicate."""
    return p.M * p.N * p.t_z_r + p.M * p.N * p.e * p.t_w_r


def runtime_parallel(p: SpeedupParams) -> float:
    """T(P), with a single machine paying no communication cost."""
    if p.P == 1:
        return runtime_total(p.with_(t_w_c=0.0))
    return runtime_total(p)


# ---------------------------------------------------------------- speedup


def speedup_formula(p: SpeedupParams, P=None):
    """The rational form in the ratios, for real (array) P, with no P = 1 special case."""
    P = p.P if P is None else P
    P = np.asarray(P, dtype=np.float64)
    k = ceil_ratio(p.M, P)
    r = ratios(p)
    if math.isinf(r.rho):
        # no communication: S = (M/k) P (t_z + e t_w) / ((M/k) t_z + e t_w P)
        tz, tw = p.t_z_r, p.e * p.t_w_r
        out = (p.M / k) * P * (tz + tw) / ((p.M / k) * tz + tw * P)
    else:
        mk = p.M / k
        out = r.rho * mk * P / (P * P / p.N + r.rho2 * P + r.rho1 * mk)
    return float(out) if np.ndim(out) == 0 else out


def speedup(p: SpeedupParams) -> float:
    """S(P) = T(1)/T(P); exactly 1 for one machine."""
    if p.P == 1:
        return 1.0
    return speedup_formula(p)


def speedup_divisible(p: SpeedupParams) -> float:
    """S = P / (1 + P/(rho N)) when P divides M."""
    if p.P != int(p.P) or p.M % int(p.P):
        raise NotDivisible(f"P={p.P} does not divide M={p.M}")
    if p.P == 1:
        return 1.0
    r = ratios(p)
    if math.isinf(r.rho):
        return float(p.P)
    return p.P / (1.0 + p.P / (r.rho * p.N))


# ---------------------------------------------------------------- intervals and maxima


def interval_bounds(M: int) -> list[tuple[float, float, int]]:
    """The M half-open intervals [M/k, M/(k-1)) of P on which ceil(M/P) = k, by increasing P."""
    out = []
    for k in range(M, 0, -1):
        lo = 1.0 if k == M else M / k
        hi = math.inf if k == 1 else M / (k - 1)
        out.append((lo, hi, k))
    return out


@dataclass(frozen=True)
class IntervalMax:
    k: int
    P_star: float
    S_star: float
    lo: float
    hi: float
    shape: str  # "increasing", "decreasing" or "peaked"

    @property
    def argmax(self) -> float:
        """Where S attains its supremum on the interval (hi for increasing: not attained)."""
        return {"increasing": self.hi, "decreasing": self.lo, "peaked": self.P_star}[self.shape]


def interval_max(p: SpeedupParams, k: int) -> IntervalMax:
    if not 1 <= k <= p.M:
        raise ValueError(f"k must be in 1..{p.M}")
    r = ratios(p)
    lo = 1.0 if k == p.M else p.M / k
    hi = math.inf if k == 1 else p.M / (k - 1)
    if math.isinf(r.rho):
        return IntervalMax(k, math.inf, r.rho, lo, hi, "increasing")
    P_star = math.sqrt(r.rho1 * p.M * p.N / k)
    S_star = (r.rho * p.M / k) / (r.rho2 + 2.0 * math.sqrt(r.rho1 * p.M / (p.N * k)))
    if P_star <= lo:
        shape = "decreasing"
    elif P_star >= hi:
        shape = "increasing"
    else:
        shape = "peaked"
    return IntervalMax(k, P_star, S_star, lo, hi, shape)


def global_max(p: SpeedupParams) -> tuple[float, float]:
    """(P*, S*) over real P >= 1."""
    r = ratios(p)
    if math.isinf(r.rho):
        # increasing without bound in P, approaching (rho/rho2) M
        return math.inf, (p.e * p.t_w_r + p.t_z_r) / (p.e * p.t_w_r) * p.M
    if p.M >= r.rho1 * p.N:
        return float(p.M), p.M / (1.0 + p.M / (r.rho * p.N))
    m = interval_max(p, 1)
    return m.P_star, m.S_star


def large_n_approx(p: SpeedupParams) -> float:
    """Speedup for P much smaller than rho2 N: rho / (rho1/P + k rho2/M).

    Equals P when P divides M and the weighted harmonic mean of M and P
    once P exceeds M.
    """
    if float(p.P).is_integer() and p.M % int(p.P) == 0:
        return float(p.P)
    r = ratios(p)
    k = ceil_ratio(p.M, p.P)
    return r.rho / (r.rho1 / p.P + k * r.rho2 / p.M)


# ---------------------------------------------------------------- invariances


def scalings(p: SpeedupParams, alpha: float) -> dict[str, SpeedupParams]:
    """The three parameter scalings that leave S unchanged."""
    N = int(round(alpha * p.N))
    if abs(N - alpha * p.N) > 1e-9 * alpha * p.N:
        raise ValueError("alpha * N must be an integer")
    return {
        "N*a, t_w_r/a, t_z_r/a": p.with_(N=N, t_w_r=p.t_w_r / alpha, t_z_r=p.t_z_r / alpha),
        "N*a, t_w_c*a": p.with_(N=N, t_w_c=p.t_w_c * alpha),
        "all times*a": p.with_(t_w_r=p.t_w_r * alpha, t_w_c=p.t_w_c * alpha, t_z_r=p.t_z_r * alpha),
    }


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def invariance_check(p: SpeedupParams, alpha: float, tol: float = 1e-12) -> bool:
    base = speedup(p)
    return all(_rel(speedup(q), base) <= tol for q in scalings(p, alpha).values())


# ---------------------------------------------------------------- theorem verifier


def default_sampler(rng: np.random.Generator, M: int) -> SpeedupParams:
    def logu(lo, hi):
        return float(10 ** rng.uniform(np.log10(lo), np.log10(hi)))
    return SpeedupParams(P=1, N=int(logu(1e2, 1e7)), M=M, e=int(rng.integers(1, 9)),
                         t_w_r=logu(1e-2, 1e2), t_w_c=logu(1.0, 1e5), t_z_r=logu(1e-1, 1e3))


def _slope_signs_unimodal(S: np.ndarray) -> bool:
    d = np.diff(S)
    tol = 1e-12 * np.maximum(np.abs(S[1:]), np.abs(S[:-1]))
    signs = np.sign(np.where(np.abs(d) <= tol, 0.0, d))
    signs = signs[signs != 0]
    # allowed: +...+ -...- (any part possibly empty)
    return not np.any(np.diff(signs) > 0)


def theorem2_verifier(M_range=(2, 3, 4, 8, 12, 32), param_sampler=None, grid_density: int = 1000,
                      draws: int = 100, seed: int = 0) -> dict:
    """Dense-grid checks of the interval structure of S(P).

    For every draw and M: S*_k strictly decreasing in k; S(M/k) > S(P) for
    all grid P < M/k (and in particular on the previous interval); S has at
    most one rise-then-fall switch within each interval; the reported
    interval shape agrees with the scan. Returns ``{draws, violations}``.
    """
    sampler = param_sampler or default_sampler
    rng = np.random.default_rng(seed)
    violations = []
    n = 0
    for _ in range(draws):
        for M in M_range:
            p = sampler(rng, M)
            n += 1
            tag = {"M": M, "N": p.N, "e": p.e, "t_w_r": p.t_w_r, "t_w_c": p.t_w_c, "t_z_r": p.t_z_r}
            stars = [interval_max(p, k).S_star for k in range(1, M + 1)]
            if any(b >= a for a, b in zip(stars, stars[1:])):
                violations.append({**tag, "check": "S*_k decreasing"})
            running_max = -np.inf
            for lo, hi, k in interval_bounds(M):
                top = hi if math.isfinite(hi) else max(4 * interval_max(p, 1).P_star, 2.0 * M)
                grid = np.linspace(lo, top, grid_density, endpoint=False)
                S = speedup_formula(p, grid)
                S_start = speedup_formula(p, M / k if k < M else 1.0)
                if k < M and not S_start > running_max:
                    violations.append({**tag, "check": "S(M/k) dominates smaller P", "k": k,
                                       "S_start": S_start, "max_before": float(running_max)})
                if not _slope_signs_unimodal(S):
                    violations.append({**tag, "check": "unimodal within interval", "k": k})
                shape = interval_max(p, k).shape
                scan_inc = bool(np.all(np.diff(S) >= -1e-12 * np.abs(S[1:])))
                scan_dec = bool(np.all(np.diff(S) <= 1e-12 * np.abs(S[1:])))
                if (shape == "increasing" and not scan_inc) or (shape == "decreasing" and not scan_dec):
                    violations.append({**tag, "check": "shape classification", "k": k, "shape": shape})
                if k >= 2:
                    S_next = speedup_formula(p, M / (k - 1))
                    if not np.all(S_next > S):
                        violations.append({**tag, "check": "S(M/(k-1)) beats its predecessor interval",
                                           "k": k})
                running_max = max(running_max, float(S.max()))
    return {"draws": n, "violations": violations}


# ---------------------------------------------------------------- practical helpers


def effective_m(L: int, D: int) -> int:
    """Number of equal-cost submodel groups: 2L once the D decoder rows are grouped into L."""
    if D < L:
        warnings.warn(f"D={D} < L={L}: decoder rows cannot be grouped, using L+D",
                      DecoderSmallerThanEncoder, stacklevel=2)
        return L + D
    return 2 * L


def log_grid(lo: float, hi: float, per_decade: int = 10) -> np.ndarray:
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n)


def fit_time_params(measured, N: int, M: int, e: int, t_w_c_grid=None, t_z_r_grid=None):
    """Least-squares grid fit of (t_w_c, t_z_r) with t_w_r fixed to 1.

    ``measured`` is a sequence of (P, speedup) pairs. Returns the best grid
    point; ties go to the earlier grid point.
    """
    measured = [(int(P), float(S)) for P, S in measured]
    if len(measured) < 2:
        raise ValueError("need at least two measurements")
    cgrid = log_grid(1e-2, 1e6) if t_w_c_grid is None else np.asarray(t_w_c_grid, dtype=float)
    zgrid = log_grid(1e-2, 1e4) if t_z_r_grid is None else np.asarray(t_z_r_grid, dtype=float)
    best, best_err = None, math.inf
    for c in cgrid:
        for z in zgrid:
            base = SpeedupParams(P=1, N=N, M=M, e=e, t_w_r=1.0, t_w_c=float(c), t_z_r=float(z))
            err = sum((speedup(base.with_(P=P)) - S) ** 2 for P, S in measured)
            if err < best_err:
                best, best_err = (float(c), float(z)), err
    return best


def speedups_from_times(times: dict) -> dict:
    """Measured S(P) = T(1)/T(P) from total step times keyed by P."""
    if 1 not in times:
        raise ValueError("need the one-machine time")
    return {P: times[1] / t for P, t in sorted(times.items())}


CURVE_COLUMNS = ("P", "S_exact", "S_divisible", "interval_k")


def emit_curve(p: SpeedupParams, p_max: int, stride: int = 1) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for P in range(1, p_max + 1, stride):
        q = p.with_(P=P)
        div = repr(speedup_divisible(q)) if p.M % P == 0 else ""
        w.writerow([P, repr(speedup(q)), div, ceil_ratio(p.M, P)])
    return buf.getvalue()
