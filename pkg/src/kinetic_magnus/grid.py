"""Homogeneous position/velocity grids and the column-stacking isomorphism.

Only interior nodes are stored; the two boundary nodes of each axis carry the
zero Dirichlet data implicitly. Indices are 0-based: interior node ``i`` of a
:class:`Grid1D` sits at ``a + (i + 1) * delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n: int
    delta: float

    @property
    def nodes(self) -> np.ndarray:
        return self.a + self.delta * np.arange(1, self.n + 1)

    def node(self, i: int) -> float:
        if not 0 <= i < self.n:
            raise IndexError(f"interior index {i} outside [0, {self.n})")
        return self.a + (i + 1) * self.delta


def build_grid(a: float, b: float, n: int) -> Grid1D:
    """Interior grid of ``n`` points on ``[a, b]`` with spacing ``(b - a)/(n + 1)``."""
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise ConfigurationError(f"grid bounds must satisfy a < b, got a={a}, b={b}")
    if int(n) != n or n < 1:
        raise ConfigurationError(f"grid needs at least one interior point, got n={n}")
    n = int(n)
    return Grid1D(float(a), float(b), n, (b - a) / (n + 1))


@dataclass(frozen=True)
class GridSpec:
    x: Grid1D
    v: Grid1D

    @classmethod
    def square(cls, d: int, lower: float = -4.0, upper: float = 4.0) -> "GridSpec":
        g = build_grid(lower, upper, d)
        return cls(g, g)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.n, self.v.n)

    @property
    def size(self) -> int:
        return self.x.n * self.v.n

    @property
    def d(self) -> int | None:
        """Common interior size when both axes agree, else ``None``."""
        return self.x.n if self.x.n == self.v.n else None

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``n_x x n_v`` arrays (``X[i, j] = x_i``)."""
        return np.meshgrid(self.x.nodes, self.v.nodes, indexing="ij")


def vectorize(field: np.ndarray, grid: GridSpec | None = None) -> np.ndarray:
    """Stack the columns of an ``n_x x n_v`` field into one vector.

    Entry ``(i, j)`` lands at position ``j * n_x + i``.
    """
    field = np.asarray(field)
    if field.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D field, got shape {field.shape}")
    if grid is not None and field.shape != grid.shape:
        raise DimensionMismatchError(
            f"field shape {field.shape} does not match grid shape {grid.shape}"
        )
    return field.reshape(-1, order="F").copy()


def devectorize(vec: np.ndarray, n_x: int, n_v: int) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.size != n_x * n_v:
        raise DimensionMismatchError(
            f"vector of shape {vec.shape} cannot be reshaped to {n_x}x{n_v}"
        )
    return vec.reshape((n_x, n_v), order="F").copy()
