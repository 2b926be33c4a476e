import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from kinetic_magnus import sparse
from kinetic_magnus.errors import DimensionMismatchError, ExpmvOverflowError, ToleranceNotReachedError


def _random_sparse(r, n, density=0.5, scale=1.0):
    M = sp.random(n, n, density=density, random_state=r, data_rvs=r.standard_normal)
    return sparse.canonical(M * scale)


def test_canonical_prunes_and_sorts():
    M = sp.csr_matrix((np.array([0.0, 2.0, 1.0]), np.array([0, 2, 1]), np.array([0, 3, 3, 3])), shape=(3, 3))
    C = sparse.canonical(M)
    assert C.nnz == 2
    assert C.has_sorted_indices
    np.testing.assert_array_equal(C.indices, [1, 2])


def test_tridiag_matches_dense():
    T = sparse.tridiag(4, -1.0, 0.0, 1.0, 0.5).toarray()
    expected = 0.5 * (np.eye(4, k=1) - np.eye(4, k=-1))
    np.testing.assert_array_equal(T, expected)
    # zero main diagonal is not stored
    assert sparse.tridiag(4, -1.0, 0.0, 1.0).nnz == 6


def test_kron_and_products_match_dense(rng):
    A, B = _random_sparse(rng, 3), _random_sparse(rng, 4)
    np.testing.assert_allclose(sparse.kron(A, B).toarray(), np.kron(A.toarray(), B.toarray()))
    C, D = _random_sparse(rng, 5), _random_sparse(rng, 5)
    np.testing.assert_allclose(sparse.spmm(C, D).toarray(), C.toarray() @ D.toarray())
    v = rng.normal(size=5)
    np.testing.assert_allclose(sparse.spmv(C, v), C.toarray() @ v)
    with pytest.raises(DimensionMismatchError):
        sparse.spmv(C, np.ones(4))


def test_commutator_of_commuting_matrices_is_empty():
    D = sparse.diag_of([1.0, 2.0, 3.0])
    assert sparse.commutator(D, D).nnz == 0
    assert sparse.nonzero_diagonals(sparse.commutator(D, 2.0 * D)) == 0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 2**31))
def test_commutator_antisymmetry_and_jacobi(n, seed):
    r = np.random.default_rng(seed)
    X, Y, Z = (_random_sparse(r, n) for _ in range(3))
    np.testing.assert_allclose(sparse.commutator(X, Y).toarray(), -sparse.commutator(Y, X).toarray(), atol=1e-12)
    c = sparse.commutator
    jacobi = c(X, c(Y, Z)) + c(Y, c(Z, X)) + c(Z, c(X, Y))
    assert np.max(np.abs(jacobi.toarray()), initial=0.0) <= 1e-10
    dense = X.toarray() @ Y.toarray() - Y.toarray() @ X.toarray()
    np.testing.assert_allclose(c(X, Y).toarray(), dense, atol=1e-12)


def test_diagonal_offsets():
    M = sp.csr_matrix(np.array([[1.0, 0, 2], [0, 0, 0], [3, 0, 0]]))
    np.testing.assert_array_equal(sparse.diagonal_offsets(M), [-2, 0, 2])
    assert sparse.nonzero_diagonals(sp.csr_matrix((3, 3))) == 0


def test_one_norm(rng):
    M = _random_sparse(rng, 6)
    assert sparse.one_norm(M) == pytest.approx(np.abs(M.toarray()).sum(axis=0).max())


def test_triplet_roundtrip(tmp_path, rng):
    M = _random_sparse(rng, 7, density=0.3)
    path = tmp_path / "pattern_M.txt"
    sparse.write_triplets(M, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# 7 7 {M.nnz}"
    assert len(lines) == M.nnz + 1
    back = sparse.read_triplets(path)
    np.testing.assert_array_equal(back.toarray(), M.toarray())


def test_expmv_zero_matrix_is_identity(rng):
    u = rng.normal(size=5)
    np.testing.assert_array_equal(sparse.expmv(sp.csr_matrix((5, 5)), u), u)


def test_expmv_zero_vector():
    M = sparse.tridiag(4, 1.0, -2.0, 1.0)
    np.testing.assert_array_equal(sparse.expmv(M, np.zeros(4)), np.zeros(4))


def test_expmv_matches_dense_100_instances():
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        M = _random_sparse(r, 6, density=0.6, scale=r.uniform(0.1, 3.0))
        u = r.normal(size=6)
        ref = expm(M.toarray()) @ u
        got = sparse.expmv(M, u)
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    assert worst <= 1e-10


def test_expmv_trace_shift_stiff_diagonal(rng):
    # large common diagonal: the shift keeps the segment count small
    M = sparse.canonical(_random_sparse(rng, 6) - 40.0 * sp.identity(6))
    u = rng.normal(size=6)
    ref = expm(M.toarray()) @ u
    for shift in (True, False):
        got = sparse.expmv(M, u, shift=shift)
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_expmv_dense_input(rng):
    M = rng.normal(size=(4, 4))
    u = rng.normal(size=4)
    np.testing.assert_allclose(sparse.expmv(M, u), expm(M) @ u, rtol=1e-10)


def test_expmv_errors(rng):
    M = _random_sparse(rng, 4)
    with pytest.raises(DimensionMismatchError):
        sparse.expmv(M, np.ones(3))
    with pytest.raises(DimensionMismatchError):
        sparse.expmv(sp.csr_matrix((3, 4)), np.ones(4))
    with pytest.raises(ValueError):
        sparse.expmv(M, np.ones(4), tol=0.0)
    with pytest.raises(ExpmvOverflowError):
        sparse.expmv(M, np.array([1.0, np.nan, 0.0, 0.0]))
    with pytest.raises(ExpmvOverflowError):
        sparse.expmv(sp.csr_matrix(np.diag([np.inf, 1.0])), np.ones(2))


def test_expmv_overflow_on_huge_growth():
    M = sp.csr_matrix(np.array([[800.0, 0.0], [0.0, 800.0]]) + np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ExpmvOverflowError):
        sparse.expmv(M, np.ones(2))


def test_expmv_term_budget():
    M = sparse.tridiag(5, 1.0, 0.0, 1.0, 0.9)
    with pytest.raises(ToleranceNotReachedError) as err:
        sparse.expmv(M, np.ones(5), theta=50.0, max_terms=3, shift=False)
    assert err.value.residual > 0
