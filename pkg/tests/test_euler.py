import numpy as np
import pytest

from kinetic_magnus.analysis import error_report
from kinetic_magnus.benchmark import LangevinParams, exact_ensemble, gaussian_datum
from kinetic_magnus.errors import ConfigurationError, DimensionMismatchError
from kinetic_magnus.euler import EulerConfig, central_first, central_second, euler_step, solve_euler
from kinetic_magnus.grid import GridSpec, devectorize, vectorize
from kinetic_magnus.magnus import BLOWN_UP, MagnusConfig, solve_iterated_magnus
from kinetic_magnus.operators import (
    FIELD_NAMES,
    CoefficientFields,
    assemble_diffusion,
    assemble_drift,
    langevin_constant,
    precompute_commutators,
    sample_coefficients,
)
from kinetic_magnus.stochastics import simulate_brownian


def test_zero_fields_identity(rng):
    grid = GridSpec.square(5)
    U = rng.normal(size=grid.shape)
    out = euler_step(CoefficientFields.zeros(grid.shape), U, 0.7, 0.01, grid)
    np.testing.assert_array_equal(out, U)


def test_constant_potential(rng):
    grid = GridSpec.square(4)
    U = rng.normal(size=grid.shape)
    out = euler_step(CoefficientFields.zeros(grid.shape, h=2.5), U, 0.0, 0.01, grid)
    np.testing.assert_allclose(out, (1 + 2.5 * 0.01) * U, rtol=1e-15)


def test_difference_helpers():
    U = np.array([[1.0, 4.0, 9.0], [2.0, 3.0, 5.0]])
    np.testing.assert_allclose(central_first(U, -1, 0.5), [[4.0, 8.0, -4.0], [3.0, 3.0, -3.0]])
    np.testing.assert_allclose(central_second(U, -1, 1.0), [[2.0, 2.0, -14.0], [-1.0, 1.0, -7.0]])


@pytest.mark.parametrize("d", [2, 6, 8])
def test_step_equals_affine_vectorized_map(rng, d):
    grid = GridSpec.square(d)
    F = CoefficientFields.zeros(grid.shape, **{n: rng.normal(size=grid.shape) for n in FIELD_NAMES})
    A, B = assemble_diffusion(F, grid), assemble_drift(F, grid)
    U = rng.normal(size=grid.shape)
    dt, dW = 1e-3, -0.02
    u = vectorize(U)
    expected = devectorize(u + dt * (B @ u) + dW * (A @ u), d, d)
    np.testing.assert_allclose(euler_step(F, U, dW, dt, grid), expected, rtol=1e-12, atol=1e-12)


def test_stacked_step_uses_per_trajectory_increments(rng):
    grid = GridSpec.square(4)
    F = sample_coefficients(langevin_constant(), grid)
    U = rng.normal(size=(3,) + grid.shape)
    dW = np.array([0.1, -0.2, 0.0])
    stacked = euler_step(F, U, dW, 1e-3, grid)
    for m in range(3):
        np.testing.assert_allclose(stacked[m], euler_step(F, U[m], dW[m], 1e-3, grid), rtol=1e-15)


def test_step_shape_mismatch():
    grid = GridSpec.square(4)
    with pytest.raises(DimensionMismatchError):
        euler_step(CoefficientFields.zeros(grid.shape), np.zeros((3, 4)), 0.0, 0.1, grid)


def test_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        EulerConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        EulerConfig(dt=0.1, check_every=0)


def test_solve_uses_shared_path_increments():
    grid = GridSpec.square(3)
    F = CoefficientFields.zeros(grid.shape, sigma=1.0)
    batch = simulate_brownian(1.0, 1e-3, 2, seed=8)
    ens = solve_euler(EulerConfig(dt=0.01), F, grid, np.ones(grid.shape), batch)
    # u' = u dW on each node: product of (1 + dW_k) over the coarse increments
    expected = np.prod(1.0 + batch.coarse_increments(0.01), axis=1)
    np.testing.assert_allclose(ens.at()[:, 0], expected, rtol=1e-12)


def test_deterministic_euler_converges_first_order():
    grid = GridSpec.square(10)
    F = sample_coefficients(langevin_constant(sigma=0.0), grid)
    comms = precompute_commutators(assemble_diffusion(F, grid), assemble_drift(F, grid), 1)
    batch = simulate_brownian(0.5, 1e-4, 1, seed=0)
    phi = gaussian_datum(grid)
    exact = solve_iterated_magnus(MagnusConfig(order=1, dt=0.5), comms, phi, batch, grid=grid).at()[0]
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        u = solve_euler(EulerConfig(dt=dt), F, grid, phi, batch).at()[0]
        errs.append(np.max(np.abs(u - exact)))
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(2.0, rel=0.2)


def test_euler_accuracy_vs_exact_d50():
    grid = GridSpec.square(50)
    F = sample_coefficients(langevin_constant(), grid)
    batch = simulate_brownian(1.0, 1e-4, 2, seed=0)
    ens = solve_euler(EulerConfig(dt=1e-4), F, grid, gaussian_datum(grid), batch)
    ref = exact_ensemble(grid, batch, LangevinParams())
    assert error_report(ref, ens, 4).err <= 0.01


def test_blowup_flagged_and_zeroed(rng):
    grid = GridSpec.square(60)
    F = sample_coefficients(langevin_constant(), grid)
    batch = simulate_brownian(1.0, 1e-3, 3, seed=0)
    # rough datum excites the unstable high-frequency mode from the start
    phi = rng.uniform(size=grid.shape)
    ens = solve_euler(EulerConfig(dt=2.5e-2, check_every=5), F, grid, phi, batch)
    assert all(s == BLOWN_UP for s in ens.status)
    assert np.isnan(ens.values).all()
    assert ens.all_failed
