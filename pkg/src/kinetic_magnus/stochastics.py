"""Seeded Brownian paths, window functionals, and Ito-identity residuals.

Each trajectory ``m`` draws from its own counter-based Philox stream keyed by
``SeedSequence(seed, spawn_key=(m,))``. Trajectory ``m`` is therefore the same
array whether it is generated alone, in a batch, serially or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

GRID_RTOL = 1e-12


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of a batch seeded by ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def steps_between(length: float, dt: float, what: str = "interval") -> int:
    """Number of ``dt`` steps in ``length``; rejects non-integer ratios."""
    if not (length > 0 and dt > 0):
        raise ConfigurationError(f"{what}: need positive length and step, got {length}, {dt}")
    ratio = length / dt
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > GRID_RTOL * max(1.0, ratio):
        raise ConfigurationError(f"{what}: {length} is not an integer multiple of {dt}")
    return k


@dataclass(frozen=True)
class PathSegment:
    """A path sampled on a uniform grid, ``values[0]`` at time 0."""

    values: np.ndarray
    dt: float

    @property
    def steps(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def length(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class BrownianBatch:
    """``M`` Brownian paths on ``[0, T]`` sampled every ``dt_leb``.

    ``paths[m, k]`` is ``W`` at time ``k * dt_leb`` for trajectory ``m``.
    """

    T: float
    dt_leb: float
    M: int
    seed: int
    paths: np.ndarray

    @property
    def steps(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.paths, axis=1)

    def index_of(self, t: float) -> int:
        if t == 0:
            return 0
        k = steps_between(t, self.dt_leb, f"time {t}")
        if k > self.steps:
            raise ConfigurationError(f"time {t} lies beyond horizon {self.T}")
        return k

    def coarse_increments(self, dt: float) -> np.ndarray:
        """``W(t_{k+1}) - W(t_k)`` on the coarser grid of step ``dt``; shape ``(M, T/dt)``."""
        stride = steps_between(dt, self.dt_leb, "coarse step")
        steps_between(self.T, dt, "horizon")
        return np.diff(self.paths[:, ::stride], axis=1)

    def subset(self, indices) -> "BrownianBatch":
        paths = self.paths[np.asarray(indices)]
        return BrownianBatch(self.T, self.dt_leb, paths.shape[0], self.seed, paths)


def simulate_brownian(T: float, dt_leb: float, M: int, seed: int) -> BrownianBatch:
    if int(M) != M or M < 1:
        raise ConfigurationError(f"need at least one trajectory, got M={M}")
    n = steps_between(T, dt_leb, "horizon")
    paths = np.zeros((int(M), n + 1))
    scale = np.sqrt(dt_leb)
    for m in range(int(M)):
        increments = trajectory_rng(seed, m).standard_normal(n) * scale
        np.cumsum(increments, out=paths[m, 1:])
    paths.setflags(write=False)
    return BrownianBatch(float(T), float(dt_leb), int(M), int(seed), paths)


def window(batch: BrownianBatch, t0: float, t1: float, m: int) -> PathSegment:
    """Path of trajectory ``m`` on ``[t0, t1]`` rebased to start at zero."""
    if not 0 <= t0 < t1:
        raise ConfigurationError(f"invalid window [{t0}, {t1}]")
    k0, k1 = batch.index_of(t0), batch.index_of(t1)
    w = batch.paths[m, k0 : k1 + 1]
    return PathSegment(w - w[0], batch.dt_leb)


@dataclass(frozen=True)
class ItoFunctionals:
    """Window length ``h`` with ``W_h``, ``int W``, ``int s W`` and ``int W^2``.

    Attributes may be arrays when several windows are evaluated at once.
    """

    h: float
    W: float
    IW: float
    IsW: float
    IW2: float


def lebesgue_functionals(segment: PathSegment, h: float | None = None) -> ItoFunctionals:
    """Left-endpoint Riemann sums of ``W``, ``sW`` and ``W^2`` over the segment.

    ``segment.values`` may be 2-D (one rebased window per row); the
    functionals are then arrays over rows.
    """
    values = np.asarray(segment.values, dtype=np.float64)
    if values.shape[-1] < 2:
        raise ConfigurationError("segment must contain at least one step")
    length = segment.length
    if h is not None and abs(h - length) > 1e-9 * max(1.0, h):
        raise ConfigurationError(f"segment spans {length}, expected {h}")
    dt = segment.dt
    left = values[..., :-1]
    s = dt * np.arange(left.shape[-1])
    return ItoFunctionals(
        h=length,
        W=values[..., -1],
        IW=left.sum(axis=-1) * dt,
        IsW=(s * left).sum(axis=-1) * dt,
        IW2=(left * left).sum(axis=-1) * dt,
    )


def window_functionals(batch: BrownianBatch, m: int, h: float, t0: float = 0.0, count: int | None = None):
    """Functionals of consecutive windows of length ``h`` for trajectory ``m``.

    Windows start at ``t0`` and tile the rest of the horizon unless ``count``
    is given. Returns an :class:`ItoFunctionals` of arrays.
    """
    k = steps_between(h, batch.dt_leb, "window")
    k0 = batch.index_of(t0)
    available = (batch.steps - k0) // k
    count = available if count is None else count
    if count < 1 or count > available:
        raise ConfigurationError(f"cannot fit {count} windows of {h} after t={t0}")
    path = batch.paths[m, k0 : k0 + count * k + 1]
    starts = path[: count * k : k]
    body = path[: count * k].reshape(count, k)
    ends = path[k :: k][:count]
    rebased = np.empty((count, k + 1))
    rebased[:, :k] = body - starts[:, None]
    rebased[:, k] = ends - starts
    return lebesgue_functionals(PathSegment(rebased, batch.dt_leb))


def _power(base, exponent):
    return np.ones_like(base) if exponent == 0 else base**exponent


def _inner_integral(s, W, dt, p, q):
    """Left Riemann sums ``J_k = sum_{l<k} s_l^p W_l^q dt`` for ``k = 0..N``."""
    integrand = _power(s[:-1], p) * _power(W[:-1], q) * dt
    J = np.zeros_like(W)
    np.cumsum(integrand, out=J[1:])
    return J


def ito_identity_residual(identity, segment: PathSegment, p=0, p1=0, p2=0, q=0, q1=0, q2=0) -> float:
    """Pathwise left-minus-right residual of an Ito/Fubini identity on ``[0, t]``.

    ``identity`` selects one of
      (a) ``int s^p W^q dW = (t^p W_t^{q+1} - int [q(q+1)/2 s^p W^{q-1} + p s^{p-1} W^{q+1}] ds)/(q+1)``
      (b) ``int s^{p1} int_0^s r^{p2} W^q dr ds = (t^{1+p1} int s^{p2} W^q ds - int s^{1+p1+p2} W^q ds)/(1+p1)``
      (c) the ``dW`` analogue of (b) with an inner Lebesgue integral.
    Stochastic integrals use left-point (Ito) sums, Lebesgue integrals left
    Riemann sums.
    """
    if identity not in ("a", "b", "c"):
        raise ValueError(f"unsupported identity {identity!r}; expected 'a', 'b' or 'c'")
    if min(p, p1, p2, q, q1, q2) < 0:
        raise ValueError("exponents must be non-negative")
    W = np.asarray(segment.values, dtype=np.float64)
    if W.ndim != 1 or W.size < 2:
        raise ConfigurationError("identity residuals need a single path with at least one step")
    dt = segment.dt
    s = segment.times
    t = s[-1]
    dW = np.diff(W)
    sl, Wl = s[:-1], W[:-1]

    def lebesgue(values):
        return float(values.sum() * dt)

    if identity == "a":
        lhs = float(np.sum(_power(sl, p) * _power(Wl, q) * dW))
        correction = 0.0
        if q > 0:
            correction += q * (q + 1) / 2 * lebesgue(_power(sl, p) * _power(Wl, q - 1))
        if p > 0:
            correction += p * lebesgue(_power(sl, p - 1) * _power(Wl, q + 1))
        rhs = (t**p * W[-1] ** (q + 1) - correction) / (q + 1)
        return lhs - rhs

    if identity == "b":
        J = _inner_integral(s, W, dt, p2, q)
        lhs = lebesgue(_power(sl, p1) * J[:-1])
        rhs = (
            t ** (1 + p1) * J[-1] - lebesgue(_power(sl, 1 + p1 + p2) * _power(Wl, q))
        ) / (1 + p1)
        return lhs - rhs

    J = _inner_integral(s, W, dt, p2, q2)
    Jl = J[:-1]
    lhs = float(np.sum(_power(sl, p1) * _power(Wl, q1) * Jl * dW))
    rhs = t**p1 * W[-1] ** (q1 + 1) * J[-1]
    rhs -= lebesgue(_power(sl, p1 + p2) * _power(Wl, q1 + q2 + 1))
    if q1 > 0:
        rhs -= q1 * (q1 + 1) / 2 * lebesgue(_power(sl, p1) * _power(Wl, q1 - 1) * Jl)
    if p1 > 0:
        rhs -= p1 * lebesgue(_power(sl, p1 - 1) * _power(Wl, q1 + 1) * Jl)
    return lhs - rhs / (q1 + 1)


def dump_path(batch: BrownianBatch, m: int, path) -> None:
    """Write ``t W`` lines for trajectory ``m`` (debugging aid)."""
    times = batch.dt_leb * np.arange(batch.steps + 1)
    np.savetxt(Path(path), np.column_stack([times, batch.paths[m]]), fmt="%.17g")
