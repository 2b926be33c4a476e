"""Error statistics on central index regions of the solution matrix.

The region ``I^kappa`` keeps the indices (1-based)
``floor(d/2 - d/2^(kappa+1)) .. floor(d/2 + d/2^(kappa+1))`` clamped to the
grid, i.e. roughly the central ``2^-kappa`` part. Indices are stored 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError
from .magnus import SolutionEnsemble


@dataclass(frozen=True)
class CentralRegion:
    d: int
    kappa: int
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def slice(self) -> slice:
        return slice(int(self.indices[0]), int(self.indices[-1]) + 1)

    def restrict(self, field: np.ndarray) -> np.ndarray:
        """Central block of an ``d x d`` field (or a stack of them)."""
        s = self.slice
        return field[..., s, s]


def central_region(d: int, kappa: int) -> CentralRegion:
    if d < 2:
        raise ConfigurationError(f"central regions need d >= 2, got {d}")
    if kappa < 0 or int(kappa) != kappa:
        raise ConfigurationError(f"kappa must be a non-negative integer, got {kappa}")
    half = d / 2 ** (kappa + 1)
    lo = max(1, math.floor(d / 2 - half))
    hi = min(d, math.floor(d / 2 + half))
    # a one-node window is not a region in any useful sense
    if hi - lo < 1:
        raise ConfigurationError(f"kappa={kappa} leaves an empty central region for d={d}")
    idx = np.arange(lo - 1, hi)
    idx.setflags(write=False)
    return CentralRegion(int(d), int(kappa), idx)


def _fields(ens: SolutionEnsemble, t):
    nx, nv = ens.grid.shape
    if nx != nv:
        raise DimensionMismatchError(f"central regions need a square grid, got {ens.grid.shape}")
    vals = ens.at(t)
    # column-stacked vectors -> (M, nx, nv)
    return vals.reshape(vals.shape[0], nv, nx).transpose(0, 2, 1)


def _pair(ref: SolutionEnsemble, app: SolutionEnsemble, region: CentralRegion, t):
    if ref.seed != app.seed:
        raise ConfigurationError(f"ensembles use different seeds ({ref.seed} vs {app.seed})")
    if ref.M != app.M:
        raise DimensionMismatchError(f"trajectory counts differ ({ref.M} vs {app.M})")
    if ref.grid.shape != app.grid.shape:
        raise DimensionMismatchError(f"grids differ ({ref.grid.shape} vs {app.grid.shape})")
    if region.d != ref.grid.shape[0]:
        raise DimensionMismatchError(f"region built for d={region.d}, grid has d={ref.grid.shape[0]}")
    return region.restrict(_fields(ref, t)), region.restrict(_fields(app, t))


def _finite(ref_block, app_block, ref, app):
    ok = np.asarray(ref.ok & app.ok)
    ok &= np.isfinite(app_block).all(axis=(1, 2)) & np.isfinite(ref_block).all(axis=(1, 2))
    return ok


def mean_abs_error(ref: SolutionEnsemble, app: SolutionEnsemble, region: CentralRegion, t=None):
    """Pointwise mean of ``|ref - app|`` over trajectories, on the region.

    Trajectories that blew up in either ensemble are left out; when none
    remain the matrix is all ``inf``.
    """
    R, U = _pair(ref, app, region, t)
    ok = _finite(R, U, ref, app)
    if not ok.any():
        return np.full((region.size, region.size), np.inf)
    return np.abs(R[ok] - U[ok]).mean(axis=0)


def avg_mean_abs_error(me: np.ndarray) -> float:
    me = np.asarray(me, dtype=np.float64)
    if me.size == 0:
        raise ConfigurationError("empty error matrix")
    return float(me.sum() / me.size)


def mean_rel_error(ref: SolutionEnsemble, app: SolutionEnsemble, region: CentralRegion, t=None) -> float:
    """Mean over trajectories of ``||ref - app||_F / ||ref||_F`` on the region.

    ``inf`` as soon as any approximating trajectory blew up.
    """
    R, U = _pair(ref, app, region, t)
    if not ref.ok.all() or not np.isfinite(R).all():
        raise ConfigurationError("reference ensemble contains blown-up trajectories")
    if not app.ok.all() or not np.isfinite(U).all():
        return math.inf
    denom = np.linalg.norm(R, axis=(1, 2))
    if np.any(denom == 0):
        raise ConfigurationError("relative error undefined: reference vanishes on the region")
    return float(np.mean(np.linalg.norm(R - U, axis=(1, 2)) / denom))


@dataclass(frozen=True)
class ErrorReport:
    method: str
    kappa: int
    me: np.ndarray
    ame: float
    err: float
    time_per_sim: float
    blowups: int
    M: int

    @property
    def err_percent(self) -> float:
        return 100.0 * self.err


def error_report(ref: SolutionEnsemble, app: SolutionEnsemble, kappa: int, t=None) -> ErrorReport:
    region = central_region(ref.grid.shape[0], kappa)
    me = mean_abs_error(ref, app, region, t)
    return ErrorReport(
        method=app.method,
        kappa=int(kappa),
        me=me,
        ame=avg_mean_abs_error(me),
        err=mean_rel_error(ref, app, region, t),
        time_per_sim=app.time_per_sim,
        blowups=app.blowups,
        M=app.M,
    )
