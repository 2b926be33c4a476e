"""Exact pathwise solution of the constant-coefficient stochastic Langevin SPDE.

With ``c = a - sigma^2`` the kernel ``Gamma_0(t, .)`` is the centred normal
density with covariance ``c K_t``, ``K_t = [[t^3/3, t^2/2], [t^2/2, t]]``.
The fundamental solution is ``Gamma_0(t, z - m_t(zeta))`` with
``m_t(zeta) = L_t zeta - sigma (int_0^t W ds, W_t)`` and ``L_t = [[1, t], [0, 1]]``.
Convolving with the datum ``phi(zeta) = exp(-|zeta|^2 / 2)`` is a Gaussian
integral; with the shifted point ``z' = (x + sigma int W, v + sigma W_t)`` and
``S = c K_t + L_t L_t^T``::

    u_t(x, v) = exp(-z'^T S^{-1} z' / 2) / sqrt(det S)

:func:`langevin_value_by_quadrature` evaluates the defining double integral
numerically and is the independent check of this expression.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ConfigurationError
from .grid import GridSpec, vectorize
from .magnus import OK, SolutionEnsemble, record_indices
from .stochastics import BrownianBatch


@dataclass(frozen=True)
class LangevinParams:
    a: float = 1.1
    sigma: float = 1.0 / np.sqrt(10.0)

    def __post_init__(self):
        if not self.a > 0 or self.sigma < 0:
            raise ConfigurationError(f"need a > 0 and sigma >= 0, got a={self.a}, sigma={self.sigma}")
        if self.a - self.sigma**2 <= 0:
            raise ConfigurationError(f"a - sigma^2 must be positive, got {self.a - self.sigma**2:.6g}")

    @property
    def c(self) -> float:
        return self.a - self.sigma**2


@dataclass(frozen=True)
class PathFunctionalsForExact:
    """Terminal value ``W_t`` and left-Riemann ``int_0^t W ds`` (scalars or arrays)."""

    W: float
    IW: float


def path_functionals(batch: BrownianBatch, t: float) -> PathFunctionalsForExact:
    """Functionals of every trajectory up to ``t``, shaped ``(M,)``."""
    k = batch.index_of(t)
    if k == 0:
        raise ConfigurationError("need t > 0")
    return PathFunctionalsForExact(
        W=batch.paths[:, k].copy(),
        IW=batch.paths[:, :k].sum(axis=1) * batch.dt_leb,
    )


def gamma0(t, x, v, params: LangevinParams):
    if not np.all(np.asarray(t) > 0):
        raise ConfigurationError("gamma0 needs t > 0")
    c = params.c
    quad = v**2 / t - 3.0 * v * x / t**2 + 3.0 * x**2 / t**3
    return np.sqrt(3.0) / (np.pi * t**2 * c) * np.exp(-2.0 / c * quad)


def gaussian_datum(grid: GridSpec) -> np.ndarray:
    X, V = grid.mesh()
    return np.exp(-(X**2 + V**2) / 2.0)


def _covariance(t, c):
    return np.array([
        [c * t**3 / 3.0 + 1.0 + t**2, c * t**2 / 2.0 + t],
        [c * t**2 / 2.0 + t, c * t + 1.0],
    ])


def exact_langevin_value(x, v, t, params: LangevinParams, path: PathFunctionalsForExact):
    """Pointwise exact solution; broadcasts over ``x``, ``v``."""
    if not t > 0:
        raise ConfigurationError("exact solution needs t > 0")
    S = _covariance(t, params.c)
    det = S[0, 0] * S[1, 1] - S[0, 1] ** 2
    xs = x + params.sigma * path.IW
    vs = v + params.sigma * path.W
    quad = (S[1, 1] * xs**2 - 2.0 * S[0, 1] * xs * vs + S[0, 0] * vs**2) / det
    return np.exp(-0.5 * quad) / np.sqrt(det)


def exact_langevin_field(grid: GridSpec, t: float, params: LangevinParams, path: PathFunctionalsForExact):
    """``n_x x n_v`` exact field at time ``t`` for scalar path functionals."""
    X, V = grid.mesh()
    return exact_langevin_value(X, V, t, params, path)


def langevin_value_by_quadrature(x, v, t, params: LangevinParams, path: PathFunctionalsForExact,
                                 bound: float = 10.0, epsabs: float = 1e-14, epsrel: float = 1e-11):
    """``int Gamma_0(t, z - m_t(zeta)) phi(zeta) dzeta`` over ``[-bound, bound]^2`` by adaptive quadrature."""
    s = params.sigma
    c = params.c
    # scalar transcription of gamma0; quad calls this ~1e5 times per node
    norm = math.sqrt(3.0) / (math.pi * t**2 * c)
    k1, k2, k3 = 2.0 / (c * t), 6.0 / (c * t**2), 6.0 / (c * t**3)
    x0 = x + s * path.IW
    v0 = v + s * path.W

    def integrand(eta, xi):
        dx = x0 - xi - t * eta
        dv = v0 - eta
        return norm * math.exp(-(k1 * dv * dv - k2 * dv * dx + k3 * dx * dx) - 0.5 * (xi * xi + eta * eta))

    # the kernel concentrates near xi = x + sigma IW - t eta; split the inner range there
    def inner(xi):
        centre = (x + s * path.IW - xi) / t
        points = [p for p in (centre, v + s * path.W) if -bound < p < bound]
        val, _ = integrate.quad(integrand, -bound, bound, args=(xi,), epsabs=epsabs, epsrel=epsrel,
                                points=points or None, limit=200)
        return val

    val, _ = integrate.quad(inner, -bound, bound, epsabs=epsabs, epsrel=epsrel, limit=200)
    return val


def exact_ensemble(grid: GridSpec, batch: BrownianBatch, params: LangevinParams,
                   record_times=None, T: float | None = None) -> SolutionEnsemble:
    """Exact solutions for every trajectory of ``batch`` at the recorded times."""
    T = batch.T if T is None else T
    times, _ = record_indices(T, batch.dt_leb, record_times)
    started = time.perf_counter()
    values = np.empty((batch.M, len(times), grid.size))
    X, V = grid.mesh()
    for r, t in enumerate(times):
        pf = path_functionals(batch, t)
        for m in range(batch.M):
            field = exact_langevin_value(X, V, t, params, PathFunctionalsForExact(pf.W[m], pf.IW[m]))
            values[m, r] = vectorize(field)
    total = time.perf_counter() - started
    status = np.full(batch.M, OK, dtype=object)
    return SolutionEnsemble(grid, times, values, status, np.full(batch.M, total / batch.M), batch.seed,
                            "exact", {"total_time": total})
