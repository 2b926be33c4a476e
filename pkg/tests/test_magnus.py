import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm

from kinetic_magnus import magnus, sparse
from kinetic_magnus.errors import ConfigurationError
from kinetic_magnus.grid import GridSpec
from kinetic_magnus.magnus import (
    BLOWN_UP,
    FAILED,
    OK,
    LogarithmAssembler,
    MagnusConfig,
    log_coefficients,
    magnus_log,
    magnus_step,
    solve_iterated_magnus,
)
from kinetic_magnus.operators import (
    CoefficientFields,
    assemble_diffusion,
    assemble_drift,
    langevin_constant,
    precompute_commutators,
    sample_coefficients,
)
from kinetic_magnus.selftest import _nilpotent_reference
from kinetic_magnus.stochastics import ItoFunctionals, PathSegment, lebesgue_functionals, simulate_brownian


def _path(rng, T=1.0, dt=1e-3):
    n = int(round(T / dt))
    return PathSegment(np.concatenate([[0.0], np.cumsum(rng.normal(size=n) * np.sqrt(dt))]), dt)


def _small_problem(d=5, sigma=1 / np.sqrt(10)):
    grid = GridSpec.square(d)
    F = sample_coefficients(langevin_constant(sigma=sigma), grid)
    A, B = assemble_diffusion(F, grid), assemble_drift(F, grid)
    return grid, F, A, B


def test_log_coefficients_values():
    f = ItoFunctionals(h=0.5, W=0.3, IW=0.1, IsW=0.02, IW2=0.04)
    w = log_coefficients(3, f)
    assert w["B"] == 0.5 and w["A"] == 0.3
    assert w["A2"] == -0.25
    assert w["BA"] == pytest.approx(0.1 - 0.5 * 0.5 * 0.3)
    assert w["BAA"] == pytest.approx(0.02 - 0.5 * 0.3 * 0.1 + 0.5 * 0.09 / 12)
    assert w["BAB"] == pytest.approx(0.02 - 0.5 * 0.5 * 0.1 - 0.25 * 0.3 / 12)
    assert set(log_coefficients(1, f)) == {"B", "A"}


def test_a_zero_gives_drift_only(rng):
    _, _, _, B = _small_problem()
    A = sp.csr_matrix(B.shape)
    comms = precompute_commutators(A, B, 3)
    f = lebesgue_functionals(_path(rng))
    for order in (1, 2, 3):
        Y = magnus_log(order, comms, f)
        assert (Y - B * f.h).count_nonzero() == 0


def test_scalar_logarithm(rng):
    for _ in range(10):
        b, a = rng.normal(size=2)
        f = lebesgue_functionals(_path(rng))
        comms = precompute_commutators(sp.csr_matrix([[a]]), sp.csr_matrix([[b]]), 3)
        expected = b * f.h + a * f.W - 0.5 * a * a * f.h
        for order in (2, 3):
            assert magnus_log(order, comms, f)[0, 0] == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_order_nesting(rng):
    _, _, A, B = _small_problem()
    comms = precompute_commutators(A, B, 3)
    f = lebesgue_functionals(_path(rng, T=0.1, dt=1e-4))
    Y1, Y2, Y3 = (magnus_log(o, comms, f).toarray() for o in (1, 2, 3))
    w = log_coefficients(3, f)
    np.testing.assert_allclose(Y2 - Y1, w["A2"] * comms.A2.toarray() + w["BA"] * comms.BA.toarray(), atol=1e-10)
    np.testing.assert_allclose(Y3 - Y2, w["BAA"] * comms.BAA.toarray() + w["BAB"] * comms.BAB.toarray(), atol=1e-9)


def test_assembler_rejects_missing_terms():
    _, _, A, B = _small_problem(3)
    with pytest.raises(ConfigurationError):
        LogarithmAssembler(precompute_commutators(A, B, 2), 3)


def test_b_zero_matches_closed_form_and_fine_euler(rng):
    grid = GridSpec.square(4)
    X, V = grid.mesh()
    F = CoefficientFields.zeros(grid.shape, sigma=0.2 + 0.1 * X, sigma_v=0.3)
    A = assemble_diffusion(F, grid)
    comms = precompute_commutators(A, sp.csr_matrix(A.shape), 2)
    seg = _path(rng, T=0.5, dt=1e-5)
    f = lebesgue_functionals(seg)
    Ad = A.toarray()
    Y = magnus_log(2, comms, f)
    np.testing.assert_allclose(Y.toarray(), Ad * f.W - 0.5 * Ad @ Ad * f.h, atol=1e-14)
    u0 = rng.normal(size=grid.size)
    u = magnus_step(Y, u0)
    exact = expm(Ad * f.W - 0.5 * Ad @ Ad * f.h) @ u0
    assert np.linalg.norm(u - exact) <= 10 * sparse.DEFAULT_EXPMV_TOL * np.linalg.norm(exact)
    # Euler-Maruyama on the same path: strong order 1/2, so only a loose match
    x = u0.copy()
    for dW in np.diff(seg.values):
        x = x + dW * (Ad @ x)
    assert np.linalg.norm(x - exact) <= 2e-2 * np.linalg.norm(exact)


def test_magnus_step_zero_and_semigroup(rng):
    _, F, _, B = _small_problem()
    u = rng.normal(size=B.shape[0])
    np.testing.assert_array_equal(magnus_step(sp.csr_matrix(B.shape), u), u)
    two = magnus_step(B * 0.1, magnus_step(B * 0.1, u))
    one = magnus_step(B * 0.2, u)
    assert np.linalg.norm(two - one) <= 10 * 1e-10 * np.linalg.norm(one)


def test_magnus_step_vs_dense(rng):
    for _ in range(10):
        Y = sp.random(6, 6, density=0.5, random_state=rng, data_rvs=rng.standard_normal).tocsr()
        u = rng.normal(size=6)
        np.testing.assert_allclose(magnus_step(Y, u), expm(Y.toarray()) @ u, rtol=1e-9, atol=1e-12)


def test_order3_exact_for_nilpotent_algebra(rng):
    for _ in range(3):
        A = np.triu(rng.normal(size=(4, 4)), 1)
        B = np.triu(rng.normal(size=(4, 4)), 1)
        seg = _path(rng, T=1.0, dt=1e-4)
        ref = _nilpotent_reference(A, B, seg)
        comms = precompute_commutators(sp.csr_matrix(A), sp.csr_matrix(B), 3)
        f = lebesgue_functionals(seg)
        err3 = np.abs(expm(magnus_log(3, comms, f).toarray()) - ref).max() / np.abs(ref).max()
        err2 = np.abs(expm(magnus_log(2, comms, f).toarray()) - ref).max() / np.abs(ref).max()
        assert err3 < 2e-3
        assert err2 > 3 * err3


def test_deterministic_iterated_independent_of_dt():
    grid, F, A, B = _small_problem(d=8, sigma=0.0)
    comms = precompute_commutators(A, B, 3)
    batch = simulate_brownian(1.0, 1e-3, 1, seed=0)
    phi = np.exp(-np.sum(np.square(grid.mesh()), axis=0) / 2)
    one = solve_iterated_magnus(MagnusConfig(order=1, dt=1.0), comms, phi, batch, grid=grid)
    ten = solve_iterated_magnus(MagnusConfig(order=1, dt=0.1), comms, phi, batch, grid=grid)
    u1, u10 = one.at()[0], ten.at()[0]
    assert np.max(np.abs(u1 - u10)) <= 10 * 1e-10 * np.max(np.abs(u1))
    three = solve_iterated_magnus(MagnusConfig(order=3, dt=0.25), comms, phi, batch, grid=grid)
    assert np.max(np.abs(three.at()[0] - u1)) <= 10 * 1e-10 * np.max(np.abs(u1))


def test_solve_shapes_and_record_times():
    grid, F, A, B = _small_problem(d=6)
    comms = precompute_commutators(A, B, 3)
    batch = simulate_brownian(1.0, 1e-3, 3, seed=1)
    phi = np.ones(grid.shape)
    ens = solve_iterated_magnus(MagnusConfig(dt=0.1), comms, phi, batch, grid=grid, record_times=(0.5, 1.0))
    assert ens.values.shape == (3, 2, 36)
    assert ens.times == (0.5, 1.0) and ens.t == 1.0
    assert np.all(ens.ok) and ens.blowups == 0
    assert ens.time_per_sim > 0
    assert ens.field(0, 0.5).shape == (6, 6)
    with pytest.raises(KeyError):
        ens.at(0.25)
    with pytest.raises(ConfigurationError):
        solve_iterated_magnus(MagnusConfig(dt=0.3), comms, phi, batch, grid=grid)
    with pytest.raises(ConfigurationError):
        solve_iterated_magnus(MagnusConfig(dt=0.1), comms, np.ones(5), batch, grid=grid)


def test_trajectory_independence_and_workers():
    grid, F, A, B = _small_problem(d=6)
    comms = precompute_commutators(A, B, 3)
    batch = simulate_brownian(1.0, 1e-3, 4, seed=2)
    phi = np.ones(grid.shape)
    cfg = MagnusConfig(dt=0.2)
    base = solve_iterated_magnus(cfg, comms, phi, batch, grid=grid)
    perm = [2, 0, 3, 1]
    permuted = solve_iterated_magnus(cfg, comms, phi, batch.subset(perm), grid=grid)
    np.testing.assert_array_equal(permuted.values, base.values[perm])
    threaded = solve_iterated_magnus(cfg, comms, phi, batch, grid=grid, workers=3)
    np.testing.assert_array_equal(threaded.values, base.values)


def test_blowup_is_flagged_not_raised(caplog):
    grid, F, A, B = _small_problem(d=6)
    comms = precompute_commutators(A, B, 2)
    batch = simulate_brownian(1.0, 1e-3, 2, seed=3)
    cfg = MagnusConfig(order=2, dt=0.1, blowup_norm_cap=1e-3)
    ens = solve_iterated_magnus(cfg, comms, np.ones(grid.shape), batch, grid=grid)
    assert list(ens.status) == [BLOWN_UP, BLOWN_UP]
    assert np.isnan(ens.values).all()
    assert ens.all_failed and "all 2" in ens.failure_report


def test_config_validation():
    with pytest.raises(ConfigurationError):
        MagnusConfig(order=4)
    with pytest.raises(ConfigurationError):
        MagnusConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        MagnusConfig(adaptive=True, order=2)
    with pytest.raises(ConfigurationError):
        MagnusConfig(adaptive=True, shrink=1.5)


def test_adaptive_never_shrinks_without_noise():
    grid, F, A, B = _small_problem(d=6, sigma=0.0)
    comms = precompute_commutators(sp.csr_matrix(A.shape), B, 3)
    batch = simulate_brownian(1.0, 1e-3, 2, seed=4)
    cfg = MagnusConfig(order=3, dt=0.25, adaptive=True, adaptive_tol=1e-12)
    ens = solve_iterated_magnus(cfg, comms, np.ones(grid.shape), batch, grid=grid)
    assert np.all(ens.info["rejected_windows"] == 0)
    assert np.all(ens.info["accepted_windows"] == 4)


def test_adaptive_infinite_tolerance_is_fixed_order3():
    grid, F, A, B = _small_problem(d=6)
    comms = precompute_commutators(A, B, 3)
    batch = simulate_brownian(1.0, 1e-3, 2, seed=5)
    phi = np.ones(grid.shape)
    fixed = solve_iterated_magnus(MagnusConfig(order=3, dt=0.1), comms, phi, batch, grid=grid)
    adaptive = solve_iterated_magnus(MagnusConfig(order=3, dt=0.1, adaptive=True, adaptive_tol=np.inf),
                                     comms, phi, batch, grid=grid)
    np.testing.assert_allclose(adaptive.values, fixed.values, rtol=1e-13, atol=1e-15)
    assert np.all(adaptive.info["rejected_windows"] == 0)


def test_adaptive_shrinks_and_can_fail():
    grid, F, A, B = _small_problem(d=6)
    comms = precompute_commutators(A, B, 3)
    batch = simulate_brownian(0.2, 1e-3, 1, seed=6)
    phi = np.ones(grid.shape)
    tight = MagnusConfig(order=3, dt=0.2, adaptive=True, adaptive_tol=1e-6, shrink=0.5)
    ens = solve_iterated_magnus(tight, comms, phi, batch, grid=grid)
    assert ens.info["rejected_windows"][0] > 0
    impossible = MagnusConfig(order=3, dt=0.2, adaptive=True, adaptive_tol=1e-300, shrink=0.5)
    ens = solve_iterated_magnus(impossible, comms, phi, batch, grid=grid)
    assert ens.status[0] == FAILED and np.isnan(ens.values).all()
