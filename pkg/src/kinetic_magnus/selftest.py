"""Release-gate property suites, runnable from the command line.

Each suite raises ``AssertionError`` on failure. :func:`run_selftest` runs
all of them, prints one line per suite and returns ``True`` if all passed.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from . import magnus, sparse
from .benchmark import (
    LangevinParams,
    PathFunctionalsForExact,
    exact_langevin_value,
    langevin_value_by_quadrature,
)
from .euler import euler_step
from .grid import GridSpec, devectorize, vectorize
from .operators import (
    CoefficientFields,
    assemble_diffusion,
    assemble_drift,
    langevin_constant,
    precompute_commutators,
    sample_coefficients,
    sparsity_report,
)
from .stochastics import PathSegment, lebesgue_functionals, trajectory_rng

SEED = 20240917


def _path(rng, T, dt):
    n = int(round(T / dt))
    W = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n) * np.sqrt(dt))])
    return PathSegment(W, dt)


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def suite_scalar_exactness(rng, tol):
    """d = 1: orders 2 and 3 give ``b h + a W - a^2 h / 2`` (commutators vanish)."""
    for _ in range(20):
        b, a = rng.normal(size=2)
        seg = _path(rng, 1.0, 1e-3)
        f = lebesgue_functionals(seg)
        comms = precompute_commutators(sp.csr_matrix([[a]]), sp.csr_matrix([[b]]), 3)
        expected = b * f.h + a * f.W - 0.5 * a * a * f.h
        for order in (2, 3):
            y = magnus.magnus_log(order, comms, f).toarray()[0, 0]
            assert abs(y - expected) <= 1e-13 * max(1.0, abs(expected)), (order, y, expected)
            u = magnus.magnus_step(magnus.magnus_log(order, comms, f), np.array([1.0]), tol)[0]
            assert abs(u - np.exp(expected)) <= 1e-12 * np.exp(expected), (order, u)


def suite_b_zero(rng, tol):
    """B = 0: iterated order 2 equals ``exp(A W_T - A^2 T / 2)`` and the dense exponential."""
    grid = GridSpec.square(4)
    X, V = grid.mesh()
    fields = CoefficientFields.zeros(grid.shape, sigma=0.3 + 0.1 * X, sigma_v=0.2 + 0.05 * V)
    A = assemble_diffusion(fields, grid)
    B = sp.csr_matrix(A.shape)
    comms = precompute_commutators(A, B, 3)
    phi = rng.normal(size=grid.size)
    seg = _path(rng, 1.0, 1e-3)
    Ad = A.toarray()
    exact = expm(Ad * seg.values[-1] - 0.5 * Ad @ Ad * seg.length) @ phi
    u = phi
    for k in range(10):
        w = seg.values[100 * k : 100 * (k + 1) + 1]
        f = lebesgue_functionals(PathSegment(w - w[0], seg.dt))
        Y = magnus.magnus_log(2, comms, f)
        dense = expm(Y.toarray()) @ u
        u = magnus.magnus_step(Y, u, tol)
        assert _rel(u, dense) <= 1e-9, _rel(u, dense)
    assert _rel(u, exact) <= 1e-9, _rel(u, exact)


def suite_expmv_semigroup(rng, tol):
    """``exp(Y) exp(Y) u = exp(2Y) u`` to ``1e-9`` with the configured Taylor tolerance."""
    for n in (6, 20):
        for _ in range(5):
            Y = sp.random(n, n, density=0.4, random_state=rng, data_rvs=rng.standard_normal)
            Y = sp.csr_matrix(Y) * 1.5
            u = rng.normal(size=n)
            twice = sparse.expmv(Y, sparse.expmv(Y, u, tol), tol)
            once = sparse.expmv(2.0 * Y, u, tol)
            assert _rel(twice, once) <= 10 * sparse.DEFAULT_EXPMV_TOL, _rel(twice, once)


def suite_vectorized_vs_hadamard(rng, tol):
    """Stencil Euler step equals ``(I + B dt + A dW) vec(U)``."""
    for d in (3, 6, 8):
        grid = GridSpec.square(d)
        fields = CoefficientFields.zeros(grid.shape, **{
            name: rng.normal(size=grid.shape)
            for name in ("h", "fx", "fv", "gxx", "gxv", "gvv", "sigma", "sigma_x", "sigma_v")
        })
        A, B = assemble_diffusion(fields, grid), assemble_drift(fields, grid)
        U = rng.normal(size=grid.shape)
        dt, dW = 1e-3, 0.03
        stencil = euler_step(fields, U, dW, dt, grid)
        u = vectorize(U)
        affine = devectorize(u + dt * (B @ u) + dW * (A @ u), d, d)
        assert _rel(stencil, affine) <= 1e-12, _rel(stencil, affine)


def suite_sparsity(rng, tol):
    """Nonzero diagonals of A, B and the commutators are (2, 5, 5, 8, 10)."""
    for d in (10, 21):
        grid = GridSpec.square(d)
        fields = sample_coefficients(langevin_constant(), grid)
        comms = precompute_commutators(assemble_diffusion(fields, grid), assemble_drift(fields, grid), 3)
        counts = tuple(diags for _, diags in sparsity_report(comms).values())
        assert counts == (2, 5, 5, 8, 10), (d, counts)


def _nilpotent_reference(A, B, seg):
    """Wong-Zakai product of ``exp((B - A^2/2) dt + A dW)`` for nilpotent 4x4 A, B."""
    drift = B - 0.5 * A @ A
    N = drift[None] * seg.dt + A[None] * np.diff(seg.values)[:, None, None]
    N2 = N @ N
    E = np.eye(4)[None] + N + N2 / 2.0 + N2 @ N / 6.0  # N^4 = 0
    X = np.eye(4)
    for Ek in E:
        X = Ek @ X
    return X


def suite_order3_nilpotent(rng, tol):
    """Strictly upper-triangular 4x4 A, B: the order-3 logarithm is exact.

    The Lie algebra is nilpotent of step 3, so the truncation error vanishes
    and only the O(dt_leb) discretization of the path functionals remains.
    Order 2 misses the double commutators and must be clearly worse.
    """
    worst3 = 0.0
    best_gap = np.inf
    for _ in range(6):
        A = np.triu(rng.normal(size=(4, 4)), 1)
        B = np.triu(rng.normal(size=(4, 4)), 1)
        seg = _path(rng, 1.0, 1e-4)
        ref = _nilpotent_reference(A, B, seg)
        f = lebesgue_functionals(seg)
        comms = precompute_commutators(sp.csr_matrix(A), sp.csr_matrix(B), 3)
        scale = np.max(np.abs(ref))
        err = {}
        for order in (2, 3):
            Y = magnus.magnus_log(order, comms, f).toarray()
            err[order] = np.max(np.abs(expm(Y) - ref)) / scale
        worst3 = max(worst3, err[3])
        best_gap = min(best_gap, err[2] / max(err[3], 1e-300))
    assert worst3 <= 2e-3, f"order-3 deviation {worst3:.2e}"
    assert best_gap >= 3.0, f"order 2 not separated from order 3 (ratio {best_gap:.2f})"


def suite_benchmark_quadrature(rng, tol):
    """Closed-form exact Langevin solution matches direct 2-D quadrature."""
    params = LangevinParams()
    for t in (0.5, 1.0):
        gen = trajectory_rng(SEED, int(10 * t))
        path = PathFunctionalsForExact(gen.normal() * np.sqrt(t), gen.normal() * np.sqrt(t**3 / 3))
        for x, v in rng.uniform(-3, 3, size=(2, 2)):
            closed = exact_langevin_value(x, v, t, params, path)
            quad = langevin_value_by_quadrature(x, v, t, params, path)
            assert abs(closed - quad) <= 1e-8 * abs(quad), (t, x, v, closed, quad)


SUITES = (
    ("scalar exactness", suite_scalar_exactness),
    ("B = 0 exactness", suite_b_zero),
    ("expmv semigroup", suite_expmv_semigroup),
    ("vectorized vs Hadamard", suite_vectorized_vs_hadamard),
    ("sparsity counts", suite_sparsity),
    ("order-3 nilpotent exactness", suite_order3_nilpotent),
    ("benchmark vs quadrature", suite_benchmark_quadrature),
)


def run_selftest(expmv_tol: float = sparse.DEFAULT_EXPMV_TOL, stream=None, suites=SUITES) -> bool:
    stream = stream or sys.stdout
    ok = True
    for name, suite in suites:
        rng = np.random.default_rng(SEED)
        started = time.perf_counter()
        try:
            suite(rng, expmv_tol)
        except Exception as exc:  # any failure, including solver errors, fails the gate
            ok = False
            print(f"FAIL  {name}: {type(exc).__name__}: {exc}", file=stream)
            continue
        print(f"pass  {name} ({time.perf_counter() - started:.2f} s)", file=stream)
    return ok
