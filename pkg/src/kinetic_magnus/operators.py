"""Coefficient sampling and assembly of the vectorized drift/diffusion operators.

For a field ``U`` on the interior grid, an x-derivative acts from the left
(``D^x U``) and a v-derivative from the right (``U (D^v)^T``). Under column
stacking these become ``I_{n_v} (x) D^x`` and ``D^v (x) I_{n_x}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from typing import Callable

import numpy as np

from . import sparse
from .errors import ConfigurationError, DimensionMismatchError
from .grid import GridSpec, vectorize

FIELD_NAMES = ("h", "fx", "fv", "gxx", "gxv", "gvv", "sigma", "sigma_x", "sigma_v")
DRIFT_FIELDS = ("h", "fx", "fv", "gxx", "gxv", "gvv")
NOISE_FIELDS = ("sigma", "sigma_x", "sigma_v")

# smallest admissible value of g^vv - (sigma^v)^2 for the Langevin families
POSITIVITY_FLOOR = 0.0

Evaluator = Callable[[np.ndarray, np.ndarray], dict]


@dataclass(frozen=True)
class CoefficientFields:
    """Grid samples ``z(x_i, v_j)`` of the nine SPDE coefficients."""

    h: np.ndarray
    fx: np.ndarray
    fv: np.ndarray
    gxx: np.ndarray
    gxv: np.ndarray
    gvv: np.ndarray
    sigma: np.ndarray
    sigma_x: np.ndarray
    sigma_v: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(getattr(self, name)) for name in FIELD_NAMES}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise DimensionMismatchError(f"coefficient fields disagree in shape: {shapes}")
        for name in FIELD_NAMES:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.h.shape

    @classmethod
    def zeros(cls, shape, **overrides) -> "CoefficientFields":
        values = {name: np.zeros(shape) for name in FIELD_NAMES}
        for name, val in overrides.items():
            values[name] = np.broadcast_to(np.asarray(val, dtype=np.float64), shape)
        return cls(**values)

    def replace(self, **changes) -> "CoefficientFields":
        values = {name: getattr(self, name) for name in FIELD_NAMES}
        for name, val in changes.items():
            values[name] = np.broadcast_to(np.asarray(val, dtype=np.float64), self.shape)
        return CoefficientFields(**values)

    def active(self, name: str) -> bool:
        return bool(np.any(getattr(self, name)))

    def without_noise(self) -> "CoefficientFields":
        return self.replace(**{name: 0.0 for name in NOISE_FIELDS})


@dataclass(frozen=True)
class CoefficientFamily:
    """Named coefficient family; ``custom`` takes a pointwise evaluator.

    A custom evaluator receives the node meshes ``X, V`` and returns a dict
    with any subset of :data:`FIELD_NAMES`; missing entries are zero.
    """

    tag: str
    a: float = 1.1
    sigma: float = 1.0 / np.sqrt(10.0)
    evaluator: Evaluator | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.tag not in ("langevin-constant", "langevin-variable", "custom"):
            raise ConfigurationError(f"unknown coefficient family {self.tag!r}")
        if self.tag == "custom":
            if self.evaluator is None:
                raise ConfigurationError("custom family needs an evaluator")
            return
        if not self.a > 0:
            raise ConfigurationError(f"diffusion parameter a must be positive, got {self.a}")
        if self.sigma < 0:
            raise ConfigurationError(f"noise parameter sigma must be non-negative, got {self.sigma}")
        if self.a - self.sigma**2 <= POSITIVITY_FLOOR:
            raise ConfigurationError(
                f"a - sigma^2 = {self.a - self.sigma**2:.6g} violates positivity (a={self.a}, sigma={self.sigma})"
            )

    @property
    def is_langevin(self) -> bool:
        return self.tag != "custom"


def langevin_constant(a: float = 1.1, sigma: float = 1.0 / np.sqrt(10.0)) -> CoefficientFamily:
    return CoefficientFamily("langevin-constant", a, sigma)


def langevin_variable(a: float = 1.1, sigma: float = 1.0 / np.sqrt(10.0)) -> CoefficientFamily:
    return CoefficientFamily("langevin-variable", a, sigma)


def sample_coefficients(family: CoefficientFamily, grid: GridSpec) -> CoefficientFields:
    X, V = grid.mesh()
    if family.tag == "langevin-constant":
        values = {"fx": -V, "gvv": np.full(grid.shape, family.a), "sigma_v": np.full(grid.shape, family.sigma)}
    elif family.tag == "langevin-variable":
        bump = 1.0 + 1.0 / (X**2 + 1.0)
        values = {"fx": -V, "gvv": family.a * bump, "sigma_v": family.sigma * np.sqrt(bump)}
    else:
        values = dict(family.evaluator(X, V))
        unknown = set(values) - set(FIELD_NAMES)
        if unknown:
            raise ConfigurationError(f"custom evaluator returned unknown fields {sorted(unknown)}")
    fields = CoefficientFields.zeros(grid.shape, **values)
    if family.is_langevin:
        margin = fields.gvv - fields.sigma_v**2
        if np.any(margin <= POSITIVITY_FLOOR):
            raise ConfigurationError(f"g^vv - (sigma^v)^2 drops to {margin.min():.3g}")
    return fields


@dataclass(frozen=True)
class Stencils:
    """Central-difference matrices with zero Dirichlet data."""

    dx: sparse.SparseMatrix
    dv: sparse.SparseMatrix
    dxx: sparse.SparseMatrix
    dvv: sparse.SparseMatrix
    ix: sparse.SparseMatrix
    iv: sparse.SparseMatrix

    @classmethod
    def from_grid(cls, grid: GridSpec) -> "Stencils":
        nx, nv = grid.shape
        hx, hv = grid.x.delta, grid.v.delta
        return cls(
            dx=sparse.tridiag(nx, -1.0, 0.0, 1.0, 1.0 / (2.0 * hx)),
            dv=sparse.tridiag(nv, -1.0, 0.0, 1.0, 1.0 / (2.0 * hv)),
            dxx=sparse.tridiag(nx, 1.0, -2.0, 1.0, 1.0 / hx**2),
            dvv=sparse.tridiag(nv, 1.0, -2.0, 1.0, 1.0 / hv**2),
            ix=sparse.identity(nx),
            iv=sparse.identity(nv),
        )


def _check_shape(fields: CoefficientFields, grid: GridSpec):
    if fields.shape != grid.shape:
        raise DimensionMismatchError(f"fields of shape {fields.shape} on grid {grid.shape}")


def _weighted(coefficient, operator, factor=1.0):
    return sparse.spmm(sparse.diag_of(factor * vectorize(coefficient)), operator)


def _sum(terms, n):
    total = sparse.SparseMatrix((n, n))
    for term in terms:
        total = total + term
    return sparse.canonical(total)


def assemble_drift(fields: CoefficientFields, grid: GridSpec) -> sparse.SparseMatrix:
    """Vectorized drift matrix ``B`` (zero coefficient fields contribute nothing)."""
    _check_shape(fields, grid)
    st = Stencils.from_grid(grid)
    operators = {
        "h": (None, 1.0),
        "fx": (lambda: sparse.kron(st.iv, st.dx), 1.0),
        "fv": (lambda: sparse.kron(st.dv, st.ix), 1.0),
        "gxx": (lambda: sparse.kron(st.iv, st.dxx), 0.5),
        "gxv": (lambda: sparse.kron(st.dv, st.dx), 1.0),
        "gvv": (lambda: sparse.kron(st.dvv, st.ix), 0.5),
    }
    return _assemble(fields, grid, operators)


def assemble_diffusion(fields: CoefficientFields, grid: GridSpec) -> sparse.SparseMatrix:
    """Vectorized noise matrix ``A``."""
    _check_shape(fields, grid)
    st = Stencils.from_grid(grid)
    operators = {
        "sigma": (None, 1.0),
        "sigma_x": (lambda: sparse.kron(st.iv, st.dx), 1.0),
        "sigma_v": (lambda: sparse.kron(st.dv, st.ix), 1.0),
    }
    return _assemble(fields, grid, operators)


def _assemble(fields, grid, operators):
    terms = []
    for name, (make_operator, factor) in operators.items():
        coefficient = getattr(fields, name)
        if not np.any(coefficient):
            continue
        if make_operator is None:
            terms.append(sparse.diag_of(factor * vectorize(coefficient)))
        else:
            terms.append(_weighted(coefficient, make_operator(), factor))
    return _sum(terms, grid.size)


@dataclass(frozen=True)
class CommutatorSet:
    """Operators consumed by the Magnus logarithm; populated per order.

    ``A2`` is ``A @ A`` for the Ito correction of order 2 and above.
    """

    order: int
    A: sparse.SparseMatrix
    B: sparse.SparseMatrix
    A2: sparse.SparseMatrix | None = None
    BA: sparse.SparseMatrix | None = None
    BAA: sparse.SparseMatrix | None = None
    BAB: sparse.SparseMatrix | None = None

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def named(self) -> dict:
        """Populated matrices keyed by name, in Magnus-term order."""
        return {
            f.name: getattr(self, f.name)
            for f in dc_fields(self)
            if f.name != "order" and getattr(self, f.name) is not None
        }


def precompute_commutators(A, B, order: int) -> CommutatorSet:
    if order not in (1, 2, 3):
        raise ConfigurationError(f"Magnus order must be 1, 2 or 3, got {order}")
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"A {A.shape} and B {B.shape} must be square and equal")
    A = sparse.canonical(A)
    B = sparse.canonical(B)
    if order == 1:
        return CommutatorSet(1, A, B)
    A2 = sparse.spmm(A, A)
    BA = sparse.commutator(B, A)
    if order == 2:
        return CommutatorSet(2, A, B, A2, BA)
    return CommutatorSet(3, A, B, A2, BA, sparse.commutator(BA, A), sparse.commutator(BA, B))


def sparsity_report(comms: CommutatorSet) -> dict:
    """``{name: (nnz, nonzero diagonals)}`` for A, B and the commutators."""
    report = {}
    for name in ("A", "B", "BA", "BAA", "BAB"):
        M = getattr(comms, name)
        if M is not None:
            report[name] = (int(M.nnz), sparse.nonzero_diagonals(M))
    return report
