import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinetic_magnus.errors import ConfigurationError, DimensionMismatchError
from kinetic_magnus.grid import GridSpec, build_grid, devectorize, vectorize


def test_build_grid_three_points():
    g = build_grid(-4, 4, 3)
    assert g.delta == 2.0
    np.testing.assert_array_equal(g.nodes, [-2.0, 0.0, 2.0])


def test_build_grid_default_cutoff():
    g = build_grid(-4, 4, 100)
    assert g.delta == pytest.approx(8 / 101, rel=1e-15)
    assert g.node(0) == pytest.approx(-4 + 8 / 101)
    assert g.node(99) == pytest.approx(4 - 8 / 101)


def test_build_grid_single_node():
    g = build_grid(0, 1, 1)
    assert g.delta == 0.5
    np.testing.assert_array_equal(g.nodes, [0.5])


@pytest.mark.parametrize("a,b,n", [(1, 1, 3), (2, 1, 3), (0, 1, 0), (0, 1, 2.5)])
def test_build_grid_rejects(a, b, n):
    with pytest.raises(ConfigurationError):
        build_grid(a, b, n)


def test_node_coordinates_match_index_arithmetic():
    g = build_grid(-3.0, 5.0, 37)
    for i in range(g.n):
        assert abs(g.node(i) - (g.a + (i + 1) * g.delta)) <= 4 * np.spacing(8.0)
    with pytest.raises(IndexError):
        g.node(37)


def test_vectorize_column_stacking():
    np.testing.assert_array_equal(vectorize(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])


def test_devectorize_inverse_example():
    np.testing.assert_array_equal(devectorize(np.array([1, 2, 3, 4]), 2, 2), [[1, 3], [2, 4]])


def test_roundtrip(rng):
    U = rng.normal(size=(5, 7))
    np.testing.assert_array_equal(devectorize(vectorize(U), 5, 7), U)
    V = rng.normal(size=(4, 6))
    np.testing.assert_array_equal(devectorize(vectorize(V), 4, 6), V)


def test_devectorize_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        devectorize(np.arange(5.0), 2, 2)


def test_vectorize_checks_grid():
    grid = GridSpec.square(3)
    with pytest.raises(DimensionMismatchError):
        vectorize(np.zeros((3, 4)), grid)


def test_gridspec_mesh_orientation():
    grid = GridSpec(build_grid(-1, 1, 3), build_grid(0, 4, 3))
    X, V = grid.mesh()
    assert grid.shape == (3, 3) and grid.size == 9
    # rows follow x, columns follow v
    np.testing.assert_allclose(X[:, 0], grid.x.nodes)
    np.testing.assert_allclose(V[0, :], grid.v.nodes)


def _kron_brute(D2T, D1):
    n2, n1 = D2T.shape[0], D1.shape[0]
    K = np.zeros((n1 * n2, n1 * n2))
    for a in range(n2):
        for b in range(n2):
            for i in range(n1):
                for j in range(n1):
                    K[a * n1 + i, b * n1 + j] = D2T[a, b] * D1[i, j]
    return K


def test_kronecker_identity_3x3(rng):
    D1, U, D2 = rng.normal(size=(3, 3, 3))
    np.testing.assert_allclose(vectorize(D1 @ U @ D2), _kron_brute(D2.T, D1) @ vectorize(U), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(1, 8), nv=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_kronecker_identity_property(nx, nv, seed):
    r = np.random.default_rng(seed)
    D1, U, D2 = r.normal(size=(nx, nx)), r.normal(size=(nx, nv)), r.normal(size=(nv, nv))
    lhs = vectorize(D1 @ U @ D2)
    rhs = _kron_brute(D2.T, D1) @ vectorize(U)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(devectorize(vectorize(U), nx, nv), U)
