"""Sparse matrix algebra and the matrix-exponential action kernel.

Matrices are ``scipy.sparse.csr_matrix`` objects over float64 in canonical
form: sorted, duplicate-free column indices per row and no stored exact zeros.
Every constructor in this module returns canonical matrices so that
nonzero-diagonal diagnostics are deterministic.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatchError,
    ExpmvOverflowError,
    ToleranceNotReachedError,
)

SparseMatrix = sp.csr_matrix

DEFAULT_EXPMV_TOL = 1e-10
DEFAULT_THETA = 1.0
MAX_TAYLOR_TERMS = 55

_INDEX_LIMIT = np.iinfo(np.int64).max


def canonical(M) -> SparseMatrix:
    """Return ``M`` as CSR float64 with sorted indices and exact zeros pruned."""
    M = sp.csr_matrix(M, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def tridiag(n: int, lo: float, mid: float, hi: float, scale: float = 1.0) -> SparseMatrix:
    """``n x n`` matrix with constant sub/main/super diagonals, times ``scale``."""
    if int(n) != n or n < 1:
        raise DimensionMismatchError(f"tridiag needs n >= 1, got {n}")
    n = int(n)
    diagonals = [
        np.full(n - 1, lo * scale),
        np.full(n, mid * scale),
        np.full(n - 1, hi * scale),
    ]
    return canonical(sp.diags(diagonals, [-1, 0, 1], shape=(n, n)))


def identity(n: int) -> SparseMatrix:
    return canonical(sp.identity(n, format="csr"))


def diag_of(values) -> SparseMatrix:
    values = np.asarray(values, dtype=np.float64).ravel()
    return canonical(sp.diags(values, 0, shape=(values.size, values.size)))


def kron(A, B) -> SparseMatrix:
    p, q = A.shape
    m, n = B.shape
    if p * m > _INDEX_LIMIT // max(q * n, 1):
        raise OverflowError(f"Kronecker product of {A.shape} and {B.shape} is too large")
    return canonical(sp.kron(A, B, format="csr"))


def spmm(A, B) -> SparseMatrix:
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatchError(f"cannot multiply {A.shape} by {B.shape}")
    return canonical(A @ B)


def spmv(A, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or A.shape[1] != v.size:
        raise DimensionMismatchError(f"cannot apply {A.shape} matrix to vector of shape {v.shape}")
    return np.asarray(A @ v)


def commutator(A, B) -> SparseMatrix:
    """``AB - BA``, with exact cancellations removed from the pattern."""
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(
            f"commutator needs square matrices of equal size, got {A.shape} and {B.shape}"
        )
    return canonical(A @ B - B @ A)


def one_norm(M) -> float:
    """Induced 1-norm (maximum absolute column sum)."""
    if M.shape[0] == 0 or M.shape[1] == 0 or M.nnz == 0:
        return 0.0
    return float(abs(M).sum(axis=0).max())


def diagonal_offsets(M) -> np.ndarray:
    """Sorted offsets ``col - row`` of every diagonal holding a nonzero entry."""
    M = canonical(M)
    coo = M.tocoo()
    return np.unique(coo.col.astype(np.int64) - coo.row.astype(np.int64))


def nonzero_diagonals(M) -> int:
    return int(diagonal_offsets(M).size)


def write_triplets(M, path) -> None:
    """Write ``row col value`` lines (0-based, row-major) for a sparsity dump."""
    coo = canonical(M).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with Path(path).open("w") as fh:
        fh.write(f"# {M.shape[0]} {M.shape[1]} {coo.nnz}\n")
        for r, c, val in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(val)!r}\n")


def read_triplets(path) -> SparseMatrix:
    with Path(path).open() as fh:
        header = fh.readline().split()
        rows, cols = int(header[1]), int(header[2])
        body = np.loadtxt(fh, ndmin=2)
    if body.size == 0:
        return sp.csr_matrix((rows, cols))
    return canonical(
        sp.coo_matrix((body[:, 2], (body[:, 0].astype(int), body[:, 1].astype(int))), shape=(rows, cols))
    )


def _shifted(M):
    """Subtract ``trace/n`` from the diagonal when that lowers the 1-norm."""
    n = M.shape[0]
    mu = float(M.diagonal().sum()) / n
    norm = one_norm(M)
    if mu == 0.0 or not np.isfinite(mu):
        return M, 0.0, norm
    shifted = M - mu * sp.identity(n, format="csr")
    shifted_norm = one_norm(shifted)
    if shifted_norm < norm:
        return shifted.tocsr(), mu, shifted_norm
    return M, 0.0, norm


def expmv(
    M,
    v,
    tol: float = DEFAULT_EXPMV_TOL,
    *,
    theta: float = DEFAULT_THETA,
    max_terms: int = MAX_TAYLOR_TERMS,
    shift: bool = True,
) -> np.ndarray:
    """Approximate ``exp(M) @ v`` with a segmented truncated Taylor series.

    The interval is split into ``s = max(1, ceil(||M||_1 / theta))`` segments.
    On each segment Taylor terms are accumulated until the last two term norms
    are both below ``tol`` times the running result norm.

    Parameters
    ----------
    M : sparse or dense square matrix
    v : ndarray
        Vector of length ``M.shape[0]``.
    tol : float
        Relative truncation tolerance per segment.
    theta : float
        Target 1-norm of a single segment.
    max_terms : int
        Taylor term budget per segment.
    shift : bool
        Subtract the mean of the diagonal first and restore it as a scalar
        factor; used only when it reduces the norm.

    Raises
    ------
    ExpmvOverflowError
        If a non-finite value appears.
    ToleranceNotReachedError
        If a segment exhausts ``max_terms`` without meeting ``tol``.
    """
    if not sp.issparse(M):
        M = sp.csr_matrix(np.asarray(M, dtype=np.float64))
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"expmv needs a square matrix, got {M.shape}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = np.array(v, dtype=np.float64)
    if f.ndim != 1 or f.size != M.shape[0]:
        raise DimensionMismatchError(f"vector of shape {f.shape} does not fit {M.shape}")
    if not np.all(np.isfinite(f)):
        raise ExpmvOverflowError("non-finite input vector")

    if shift:
        M, mu, norm = _shifted(M)
    else:
        mu, norm = 0.0, one_norm(M)
    if not np.isfinite(norm):
        raise ExpmvOverflowError("non-finite matrix entries")
    s = max(1, math.ceil(norm / theta))
    try:
        eta = math.exp(mu / s) if mu else 1.0
    except OverflowError:
        eta = math.inf
    if not np.isfinite(eta):
        raise ExpmvOverflowError(f"scalar factor exp({mu / s:.3g}) overflows")

    for _ in range(s):
        f_norm = np.linalg.norm(f, np.inf)
        if f_norm == 0.0:
            return f
        term = f
        c_prev = f_norm
        # cheap upper bound on ||f||; exact norm is taken only to confirm convergence
        bound = f_norm
        converged = False
        for k in range(1, max_terms + 1):
            term = M @ term
            term *= 1.0 / (s * k)
            c = np.linalg.norm(term, np.inf)
            f += term
            bound += c
            if max(c, c_prev) <= tol * bound:
                f_norm = np.linalg.norm(f, np.inf)
                if not np.isfinite(f_norm):
                    raise ExpmvOverflowError("non-finite values in Taylor accumulation")
                bound = f_norm
                if max(c, c_prev) <= tol * f_norm:
                    converged = True
                    break
            elif not np.isfinite(c):
                raise ExpmvOverflowError("non-finite Taylor term")
            c_prev = c
        if not converged:
            f_norm = np.linalg.norm(f, np.inf)
            if not np.isfinite(f_norm):
                raise ExpmvOverflowError("non-finite values in Taylor accumulation")
            raise ToleranceNotReachedError(
                f"Taylor series did not converge in {max_terms} terms",
                (c + c_prev) / f_norm if f_norm else np.inf,
            )
        if eta != 1.0:
            f *= eta
    if not np.all(np.isfinite(f)):
        raise ExpmvOverflowError("non-finite result")
    return f
