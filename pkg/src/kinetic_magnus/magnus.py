"""Ito-stochastic Magnus logarithms (orders 1-3) and the iterated scheme.

For constant ``A``, ``B`` and a window of length ``h`` driven by the rebased
path ``W``, the logarithm is a linear combination of fixed matrices::

    order 1:  B h + A W
    order 2:  - A^2 h / 2 + [B,A] (int W - h W / 2)
    order 3:  + [[B,A],A] (int W^2 / 2 - W int W / 2 + h W^2 / 12)
              + [[B,A],B] (int sW - h int W / 2 - h^2 W / 12)

Only the scalar weights change from window to window, so the solver stores
every matrix on the union sparsity pattern once and forms each logarithm as a
single small dense product.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sparse
from .errors import (
    ConfigurationError,
    ExpmvOverflowError,
    ToleranceNotReachedError,
)
from .grid import GridSpec, devectorize
from .operators import CommutatorSet
from .stochastics import (
    BrownianBatch,
    ItoFunctionals,
    PathSegment,
    lebesgue_functionals,
    steps_between,
    window_functionals,
)

log = logging.getLogger(__name__)

OK, BLOWN_UP, FAILED = "ok", "blown-up", "failed"

TERMS_BY_ORDER = {
    1: ("B", "A"),
    2: ("B", "A", "A2", "BA"),
    3: ("B", "A", "A2", "BA", "BAA", "BAB"),
}


def log_coefficients(order: int, f: ItoFunctionals) -> dict:
    """Scalar weight of each matrix term in the order-``order`` logarithm."""
    h, W, IW = f.h, f.W, f.IW
    weights = {"B": h, "A": W}
    if order >= 2:
        weights["A2"] = -0.5 * h
        weights["BA"] = IW - 0.5 * h * W
    if order >= 3:
        weights["BAA"] = 0.5 * f.IW2 - 0.5 * W * IW + h * W * W / 12.0
        weights["BAB"] = f.IsW - 0.5 * h * IW - h * h * W / 12.0
    return weights


@dataclass(frozen=True)
class MagnusConfig:
    order: int = 3
    dt: float = 0.1
    expmv_tol: float = sparse.DEFAULT_EXPMV_TOL
    blowup_norm_cap: float = 1e10
    adaptive: bool = False
    adaptive_tol: float = 1e-3
    shrink: float = 0.5
    theta: float = sparse.DEFAULT_THETA

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ConfigurationError(f"Magnus order must be 1, 2 or 3, got {self.order}")
        if not self.dt > 0:
            raise ConfigurationError(f"step size must be positive, got {self.dt}")
        if not self.expmv_tol > 0:
            raise ConfigurationError(f"expmv tolerance must be positive, got {self.expmv_tol}")
        if self.adaptive:
            if self.order != 3:
                raise ConfigurationError("adaptive step control compares orders 2 and 3; set order=3")
            if not 0 < self.shrink < 1:
                raise ConfigurationError(f"shrink factor must lie in (0, 1), got {self.shrink}")
            if not self.adaptive_tol > 0:
                raise ConfigurationError(f"adaptive tolerance must be positive, got {self.adaptive_tol}")


@dataclass
class SolutionEnsemble:
    """Per-trajectory solution vectors at the recorded times.

    ``values[m, r]`` is the column-stacked field of trajectory ``m`` at
    ``times[r]``; rows of trajectories that did not finish are NaN.
    """

    grid: GridSpec
    times: tuple
    values: np.ndarray
    status: np.ndarray
    wall_time: np.ndarray
    seed: int
    method: str = ""
    info: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> float:
        return self.times[-1]

    def at(self, t: float | None = None) -> np.ndarray:
        if t is None:
            return self.values[:, -1]
        for r, tr in enumerate(self.times):
            if abs(tr - t) <= 1e-9 * max(1.0, abs(t)):
                return self.values[:, r]
        raise KeyError(f"time {t} was not recorded (have {self.times})")

    def field(self, m: int, t: float | None = None) -> np.ndarray:
        nx, nv = self.grid.shape
        return devectorize(self.at(t)[m], nx, nv)

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK

    @property
    def blowups(self) -> int:
        return int(np.count_nonzero(~self.ok))

    @property
    def all_failed(self) -> bool:
        return self.blowups == self.M

    @property
    def time_per_sim(self) -> float:
        return float(self.info.get("total_time", self.wall_time.sum()) / self.M)

    @property
    def failure_report(self) -> str | None:
        if not self.all_failed:
            return None
        return f"{self.method or 'solver'}: all {self.M} trajectories blew up or failed"


def record_indices(T: float, step: float, record_times) -> dict:
    """Map step counts to positions in the recorded-times tuple."""
    times = (T,) if record_times is None else tuple(sorted(record_times))
    indices = {}
    for r, t in enumerate(times):
        if not 0 < t <= T * (1 + 1e-12):
            raise ConfigurationError(f"record time {t} outside (0, {T}]")
        indices[steps_between(t, step, f"record time {t}")] = r
    return times, indices


class LogarithmAssembler:
    """Assemble Magnus logarithms on a fixed union sparsity pattern.

    Instances are read-only after construction and may be shared between
    threads.
    """

    def __init__(self, comms: CommutatorSet, order: int):
        if order not in TERMS_BY_ORDER:
            raise ConfigurationError(f"Magnus order must be 1, 2 or 3, got {order}")
        if comms.order < order:
            raise ConfigurationError(
                f"commutator set of order {comms.order} lacks the terms for order {order}"
            )
        self.order = order
        self.names = TERMS_BY_ORDER[order]
        n = comms.size
        self.n = n
        coos = [getattr(comms, name).tocoo() for name in self.names]
        keys = [c.row.astype(np.int64) * n + c.col.astype(np.int64) for c in coos]
        union = np.unique(np.concatenate(keys)) if keys else np.zeros(0, np.int64)
        self.components = np.zeros((len(self.names), union.size))
        for i, (c, k) in enumerate(zip(coos, keys)):
            self.components[i, np.searchsorted(union, k)] = c.data
        rows = union // n
        self.indices = (union % n).astype(np.int32 if n < 2**31 else np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(
            self.indices.dtype
        )
        self.indices.setflags(write=False)
        self.indptr.setflags(write=False)
        self.components.setflags(write=False)

    def weights(self, coefficients: dict) -> np.ndarray:
        return np.array([coefficients.get(name, 0.0) for name in self.names], dtype=np.float64)

    def build(self, coefficients: dict) -> sp.csr_matrix:
        data = self.weights(coefficients) @ self.components
        Y = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n), copy=False)
        Y.has_sorted_indices = True
        return Y


def magnus_log(order: int, comms: CommutatorSet, f: ItoFunctionals) -> sparse.SparseMatrix:
    """Magnus logarithm of the given order for one window, in canonical form."""
    assembler = LogarithmAssembler(comms, order)
    return sparse.canonical(assembler.build(log_coefficients(order, f)))


def magnus_step(Y, u, tol: float = sparse.DEFAULT_EXPMV_TOL, theta: float = sparse.DEFAULT_THETA):
    """``exp(Y) u``; overflow surfaces as :class:`ExpmvOverflowError`."""
    return sparse.expmv(Y, u, tol, theta=theta)


def _run_trajectories(run, M, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(M)))
    return [run(m) for m in range(M)]


def _finalize(results, grid, times, batch, method, started, extra=None):
    values = np.stack([r[0] for r in results])
    status = np.array([r[1] for r in results], dtype=object)
    wall = np.array([r[2] for r in results])
    info = {"total_time": time.perf_counter() - started}
    if extra:
        info.update(extra)
    ens = SolutionEnsemble(grid, times, values, status, wall, batch.seed, method, info)
    if ens.all_failed:
        log.warning(ens.failure_report)
    return ens


def _exceeds(u, cap):
    norm = np.linalg.norm(u, np.inf)
    return not np.isfinite(norm) or norm > cap


def solve_iterated_magnus(
    cfg: MagnusConfig,
    comms: CommutatorSet,
    phi: np.ndarray,
    batch: BrownianBatch,
    T: float | None = None,
    *,
    grid: GridSpec | None = None,
    record_times=None,
    workers: int = 1,
) -> SolutionEnsemble:
    """Advance every trajectory of ``batch`` window by window.

    Each window restarts the truncated expansion from the previous terminal
    vector. A trajectory is flagged as blown up as soon as its state turns
    non-finite, exceeds ``cfg.blowup_norm_cap`` in the max-norm, or the
    exponential action fails.
    """
    if cfg.adaptive:
        return adaptive_step_control(cfg, comms, phi, batch, T, grid=grid, record_times=record_times, workers=workers)
    T = batch.T if T is None else T
    phi = _check_initial(phi, comms)
    steps_between(cfg.dt, batch.dt_leb, "Magnus step")
    n_windows = steps_between(T, cfg.dt, "horizon")
    if T > batch.T * (1 + 1e-12):
        raise ConfigurationError(f"horizon {T} exceeds Brownian batch horizon {batch.T}")
    times, slots = record_indices(T, cfg.dt, record_times)
    grid = grid or _square_grid(comms.size)
    assembler = LogarithmAssembler(comms, cfg.order)

    def run(m):
        start = time.perf_counter()
        out = np.full((len(times), comms.size), np.nan)
        f = window_functionals(batch, m, cfg.dt, count=n_windows)
        u = phi.copy()
        status = OK
        for k in range(n_windows):
            coefficients = log_coefficients(
                cfg.order, ItoFunctionals(f.h, f.W[k], f.IW[k], f.IsW[k], f.IW2[k])
            )
            try:
                u = sparse.expmv(assembler.build(coefficients), u, cfg.expmv_tol, theta=cfg.theta)
            except (ExpmvOverflowError, ToleranceNotReachedError):
                status = BLOWN_UP
                break
            if _exceeds(u, cfg.blowup_norm_cap):
                status = BLOWN_UP
                break
            if k + 1 in slots:
                out[slots[k + 1]] = u
        if status != OK:
            out[:] = np.nan
        return out, status, time.perf_counter() - start

    started = time.perf_counter()
    results = _run_trajectories(run, batch.M, workers)
    return _finalize(results, grid, times, batch, f"m{cfg.order}", started)


def adaptive_step_control(
    cfg: MagnusConfig,
    comms: CommutatorSet,
    phi: np.ndarray,
    batch: BrownianBatch,
    T: float | None = None,
    *,
    grid: GridSpec | None = None,
    record_times=None,
    workers: int = 1,
) -> SolutionEnsemble:
    """Order-3 iterated Magnus with step rejection by an order-2/order-3 comparison.

    A window is accepted when the max-norm relative difference of the two
    results is at most ``cfg.adaptive_tol``; otherwise its length is
    multiplied by ``cfg.shrink`` (rounded down to the Lebesgue grid) and the
    window is retried. Every new window starts again from ``cfg.dt``.
    A trajectory fails once a window would drop below one Lebesgue step.
    """
    if comms.order < 3:
        raise ConfigurationError("adaptive step control needs order-3 commutators")
    T = batch.T if T is None else T
    phi = _check_initial(phi, comms)
    base = steps_between(cfg.dt, batch.dt_leb, "Magnus step")
    total = steps_between(T, batch.dt_leb, "horizon")
    if total > batch.steps:
        raise ConfigurationError(f"horizon {T} exceeds Brownian batch horizon {batch.T}")
    times, slots = record_indices(T, batch.dt_leb, record_times)
    stops = sorted(slots)
    grid = grid or _square_grid(comms.size)
    assembler = LogarithmAssembler(comms, 3)
    check = np.isfinite(cfg.adaptive_tol)

    def run(m):
        start = time.perf_counter()
        out = np.full((len(times), comms.size), np.nan)
        u = phi.copy()
        status = OK
        pos = 0
        accepted = rejected = 0
        next_stop = iter(stops)
        stop = next(next_stop)
        while pos < total and status == OK:
            k = min(base, stop - pos)
            while True:
                seg = batch.paths[m, pos : pos + k + 1]
                f = lebesgue_functionals(PathSegment(seg - seg[0], batch.dt_leb))
                coefficients = log_coefficients(3, f)
                try:
                    u3 = sparse.expmv(assembler.build(coefficients), u, cfg.expmv_tol, theta=cfg.theta)
                    if check:
                        low = {name: coefficients[name] for name in TERMS_BY_ORDER[2]}
                        u2 = sparse.expmv(assembler.build(low), u, cfg.expmv_tol, theta=cfg.theta)
                except (ExpmvOverflowError, ToleranceNotReachedError):
                    u3 = None
                if u3 is not None and not check:
                    break
                if u3 is not None:
                    scale = np.linalg.norm(u3, np.inf)
                    gap = np.linalg.norm(u3 - u2, np.inf)
                    if np.isfinite(gap) and gap <= cfg.adaptive_tol * scale:
                        break
                rejected += 1
                k = int(np.floor(cfg.shrink * k))
                if k < 1:
                    status = FAILED
                    break
            if status != OK:
                break
            u = u3
            pos += k
            accepted += 1
            if _exceeds(u, cfg.blowup_norm_cap):
                status = BLOWN_UP
                break
            if pos == stop:
                out[slots[pos]] = u
                stop = next(next_stop, total)
        if status != OK:
            out[:] = np.nan
        return out, status, time.perf_counter() - start, accepted, rejected

    started = time.perf_counter()
    results = _run_trajectories(run, batch.M, workers)
    extra = {
        "accepted_windows": np.array([r[3] for r in results]),
        "rejected_windows": np.array([r[4] for r in results]),
    }
    return _finalize(results, grid, times, batch, "m3-adaptive", started, extra)


def _check_initial(phi, comms):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 2:
        phi = phi.reshape(-1, order="F")
    if phi.shape != (comms.size,):
        raise ConfigurationError(f"initial vector of shape {phi.shape} does not match operator size {comms.size}")
    if not np.all(np.isfinite(phi)):
        raise ConfigurationError("initial vector must be finite")
    return phi


def _square_grid(size):
    d = int(round(np.sqrt(size)))
    if d * d != size:
        raise ConfigurationError("pass grid= for non-square operator sizes")
    return GridSpec.square(d)
