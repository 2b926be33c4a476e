"""Explicit Euler-Maruyama in matrix (stencil/Hadamard) form.

The state is kept as ``n_x x n_v`` fields, stacked over trajectories, and the
central differences are applied by array slicing; no ``(n_x n_v)^2`` operator
is ever formed. Increments come from the shared :class:`BrownianBatch`, so an
Euler run and a Magnus run with the same batch see the same path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError
from .grid import GridSpec
from .magnus import BLOWN_UP, OK, SolutionEnsemble, record_indices
from .operators import CoefficientFields
from .stochastics import BrownianBatch, steps_between


@dataclass(frozen=True)
class EulerConfig:
    dt: float
    record_times: tuple | None = None
    blowup_norm_cap: float = 1e10
    check_every: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"Euler step must be positive, got {self.dt}")
        if self.check_every < 1:
            raise ConfigurationError("check_every must be at least 1")


def _index(axis, ndim, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def central_first(U, axis, delta):
    """``(u_{i+1} - u_{i-1}) / (2 delta)`` along ``axis`` with zero boundary values."""
    out = np.zeros_like(U)
    nd = U.ndim
    if U.shape[axis] > 1:
        np.subtract(U[_index(axis, nd, slice(2, None))], U[_index(axis, nd, slice(None, -2))],
                    out=out[_index(axis, nd, slice(1, -1))])
        out[_index(axis, nd, 0)] = U[_index(axis, nd, 1)]
        out[_index(axis, nd, -1)] = -U[_index(axis, nd, -2)]
    out *= 1.0 / (2.0 * delta)
    return out


def central_second(U, axis, delta):
    """``(u_{i+1} - 2 u_i + u_{i-1}) / delta^2`` along ``axis`` with zero boundary values."""
    out = -2.0 * U
    nd = U.ndim
    out[_index(axis, nd, slice(1, None))] += U[_index(axis, nd, slice(None, -1))]
    out[_index(axis, nd, slice(None, -1))] += U[_index(axis, nd, slice(1, None))]
    out *= 1.0 / delta**2
    return out


class StencilOperator:
    """Drift and noise brackets of the Euler update for fixed coefficients.

    Fields that vanish identically are skipped.
    """

    def __init__(self, fields: CoefficientFields, grid: GridSpec):
        if fields.shape != grid.shape:
            raise DimensionMismatchError(f"fields of shape {fields.shape} on grid {grid.shape}")
        self.fields = fields
        self.hx = grid.x.delta
        self.hv = grid.v.delta
        self.active = {name for name in ("h", "fx", "fv", "gxx", "gxv", "gvv", "sigma", "sigma_x", "sigma_v")
                       if fields.active(name)}
        self.half_gxx = 0.5 * fields.gxx
        self.half_gvv = 0.5 * fields.gvv

    def drift(self, U):
        F = self.fields
        out = np.zeros_like(U)
        need_dx = "fx" in self.active or "gxv" in self.active
        dx = central_first(U, -2, self.hx) if need_dx else None
        if "h" in self.active:
            out += F.h * U
        if "fx" in self.active:
            out += F.fx * dx
        if "fv" in self.active:
            out += F.fv * central_first(U, -1, self.hv)
        if "gxx" in self.active:
            out += self.half_gxx * central_second(U, -2, self.hx)
        if "gxv" in self.active:
            out += F.gxv * central_first(dx, -1, self.hv)
        if "gvv" in self.active:
            out += self.half_gvv * central_second(U, -1, self.hv)
        return out

    def noise(self, U):
        F = self.fields
        out = np.zeros_like(U)
        if "sigma" in self.active:
            out += F.sigma * U
        if "sigma_x" in self.active:
            out += F.sigma_x * central_first(U, -2, self.hx)
        if "sigma_v" in self.active:
            out += F.sigma_v * central_first(U, -1, self.hv)
        return out

    @property
    def has_noise(self) -> bool:
        return bool(self.active & {"sigma", "sigma_x", "sigma_v"})

    def step(self, U, dW, dt):
        U_next = U + self.drift(U) * dt
        if self.has_noise:
            dW = np.asarray(dW, dtype=np.float64)
            if dW.ndim:
                dW = dW.reshape(dW.shape + (1, 1))
            U_next += self.noise(U) * dW
        return U_next


def euler_step(fields: CoefficientFields, U, dW, dt, grid: GridSpec):
    """One Euler-Maruyama step of a field (or a stack of fields over leading axes).

    ``dW`` is a scalar or has the shape of the leading (trajectory) axes.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.shape[-2:] != grid.shape:
        raise DimensionMismatchError(f"field of shape {U.shape} on grid {grid.shape}")
    return StencilOperator(fields, grid).step(U, dW, dt)


def solve_euler(
    cfg: EulerConfig,
    fields: CoefficientFields,
    grid: GridSpec,
    phi,
    batch: BrownianBatch,
    T: float | None = None,
) -> SolutionEnsemble:
    """Advance all trajectories of ``batch`` together with step ``cfg.dt``.

    Trajectories whose field turns non-finite or exceeds the norm cap are
    flagged and frozen at zero; the run stops early once all have blown up.
    Reported wall time per trajectory is the batch time divided by ``M``.
    """
    T = batch.T if T is None else T
    n_steps = steps_between(T, cfg.dt, "horizon")
    steps_between(cfg.dt, batch.dt_leb, "Euler step")
    if T > batch.T * (1 + 1e-12):
        raise ConfigurationError(f"horizon {T} exceeds Brownian batch horizon {batch.T}")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi.reshape(grid.shape, order="F")
    if phi.shape != grid.shape:
        raise DimensionMismatchError(f"initial field of shape {phi.shape} on grid {grid.shape}")
    times, slots = record_indices(T, cfg.dt, cfg.record_times)
    op = StencilOperator(fields, grid)

    started = time.perf_counter()
    dW = batch.coarse_increments(cfg.dt)[:, :n_steps]
    M = batch.M
    U = np.broadcast_to(phi, (M,) + grid.shape).copy()
    out = np.full((M, len(times), grid.size), np.nan)
    alive = np.ones(M, dtype=bool)

    def screen():
        norms = np.abs(U).max(axis=(1, 2))
        bad = alive & ~(np.isfinite(norms) & (norms <= cfg.blowup_norm_cap))
        if bad.any():
            alive[bad] = False
            U[bad] = 0.0

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            U = op.step(U, dW[:, k], cfg.dt)
            if (k + 1) % cfg.check_every == 0 or (k + 1) in slots or k + 1 == n_steps:
                screen()
                if not alive.any():
                    break
            if k + 1 in slots:
                r = slots[k + 1]
                # column stacking per trajectory: vec(U_m) = U_m.T.ravel()
                out[alive, r] = U[alive].transpose(0, 2, 1).reshape(int(alive.sum()), -1)
    out[~alive] = np.nan
    total = time.perf_counter() - started
    status = np.where(alive, OK, BLOWN_UP).astype(object)
    wall = np.full(M, total / M)
    return SolutionEnsemble(grid, times, out, status, wall, batch.seed, "euler", {"total_time": total})
