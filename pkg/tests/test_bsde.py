import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from jumpflow import (
    DriverSpec,
    LevyMeasure,
    TimeGrid,
    WeightFamily,
    get_problem,
    jump_residual,
    simulate_paths,
    solve_system,
)
from jumpflow.bsde import BasisSpec, estimator_std_error
from jumpflow.oracle import SpatialGrid, solve_pide


def make_bundle(problem, paths, steps, seed):
    grid = TimeGrid(problem.t_start, problem.horizon, steps)
    return simulate_paths(problem.coeffs, problem.measure, (problem.t_start, problem.x0),
                          grid, paths, seed)


def test_martingale_reduction_start_value():
    p = get_problem("martingale1d")
    b = make_bundle(p, 40_000, 50, seed=2)
    sol = solve_system(p.driver, b)
    u0 = sol.value_function.evaluate(0.0, [1.0], 0)
    se = estimator_std_error(sol, p.driver, b, 0)
    assert abs(u0 - 1.0) <= 3 * se


def test_martingale_value_function_is_identity_on_grid():
    p = get_problem("martingale1d")
    b = make_bundle(p, 40_000, 50, seed=3)
    sol = solve_system(p.driver, b)
    vf = sol.value_function
    level = estimator_std_error(sol, p.driver, b, 0)
    for j in (1, 25, 49):
        t = b.grid.nodes[j]
        for x in np.quantile(b.states[:, j, 0], [0.1, 0.5, 0.9]):
            u = vf.evaluate(t, [x], 0)
            se = np.sqrt(vf.point_std_error(t, [x], 0) ** 2 + level**2)
            assert abs(u - x) <= 4 * se + 1e-6


def test_constant_driver_adds_deterministic_integral():
    p = get_problem("martingale1d")
    c = 0.3
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: np.full(x.shape[0], c),),
        g=p.driver.g,
        weights=p.driver.weights,
        lipschitz_bound=0.1,
    )
    b = make_bundle(p, 40_000, 50, seed=4)
    sol = solve_system(driver, b)
    u0 = sol.value_function.evaluate(0.0, [1.0], 0)
    se = estimator_std_error(sol, driver, b, 0)
    assert abs(u0 - (1.0 + c * 1.0)) <= 3 * se


def test_purejump_compensation_start_value():
    p = get_problem("purejump1d")
    b = make_bundle(p, 100_000, 50, seed=5)
    sol = solve_system(p.driver, b, degree=p.defaults["degree"])
    u0 = sol.value_function.evaluate(0.0, [0.0], 0)
    se = estimator_std_error(sol, p.driver, b, 0)
    assert abs(u0 - 0.0) <= 3 * se


def test_terminal_condition_exact():
    p = get_problem("nonmonotone1d")
    b = make_bundle(p, 5_000, 20, seed=6)
    sol = solve_system(p.driver, b)
    assert np.array_equal(sol.Y[:, -1, 0], p.driver.g[0](b.states[:, -1, :]))
    # evaluation at the horizon returns the terminal function itself
    xs = np.array([[0.3], [1.0], [2.2]])
    assert np.array_equal(sol.value_function.evaluate(p.horizon, xs, 0), p.driver.g[0](xs))


def test_symmetric_pair_identical_components():
    p = get_problem("coupled2pair")
    b = make_bundle(p, 10_000, 25, seed=7)
    sol = solve_system(p.driver, b)
    assert np.array_equal(sol.Y[:, :, 0], sol.Y[:, :, 1])
    assert np.array_equal(sol.Z[:, :, 0, :], sol.Z[:, :, 1, :])
    assert np.array_equal(sol.Gamma[:, :, 0], sol.Gamma[:, :, 1])


def test_empty_measure_reduces_to_classical_scheme_bitwise():
    p = get_problem("martingale1d")
    b = make_bundle(p, 8_000, 12, seed=8)
    sol = solve_system(p.driver, b)
    # reference: the same backward recursion with every jump branch removed
    basis = BasisSpec(1, degree=3)
    Y = p.driver.g[0](b.states[:, -1, :])
    for j in range(b.grid.steps - 1, -1, -1):
        t = b.grid.nodes[j]
        Xj = b.states[:, j, :]
        center, scale, _ = basis.calibrate(t, Xj)
        F = basis.design(t, Xj, center, scale)
        G = F.T @ F
        G[np.diag_indices_from(G)] += 1e-8 * np.trace(G) / F.shape[1]
        Y = F @ cho_solve(cho_factor(G), F.T @ Y)
        assert np.array_equal(Y, sol.Y[:, j, 0])


def test_frozen_mode_reproduces_closed_form_fixed_point():
    p = get_problem("linearjump1d")
    b = make_bundle(p, 60_000, 20, seed=9)
    sol = solve_system(p.driver, b, frozen_u=p.closed_form)
    u0 = sol.value_function.evaluate(0.0, [1.0], 0)
    se = estimator_std_error(sol, p.driver, b, 0)
    assert abs(u0 - 1.06) <= 3 * se


def test_kinked_problem_against_pide_oracle():
    p = get_problem("jumpcall1d")
    lo, hi = p.oracle_domain()
    ref = solve_pide(p, SpatialGrid(lo, hi, 2000), 400).value(0.0, 1.0, 0)
    b = make_bundle(p, 30_000, 50, seed=10)
    sol = solve_system(p.driver, b, extras=p.extra_basis)
    u0 = sol.value_function.evaluate(0.0, [1.0], 0)
    se = estimator_std_error(sol, p.driver, b, 0)
    assert abs(u0 - ref) <= max(0.01 * abs(ref), 3 * se)


def test_jump_residual_no_jumps_is_zero():
    p = get_problem("martingale1d")
    b = make_bundle(p, 4_000, 10, seed=11)
    sol = solve_system(p.driver, b)
    assert jump_residual(sol, b)[0] == 0.0


def test_jump_residual_pure_jump_linear_under_five_percent():
    # linear terminal makes both jump estimates the same linear increment:
    # u(x + e) - u(x) = e exactly, so the residual is pure estimator noise
    p = get_problem("purejump1d")
    b = make_bundle(p, 100_000, 50, seed=12)
    sol = solve_system(p.driver, b, degree=1)
    res = jump_residual(sol, b)[0]
    assert res < 0.05


def test_jump_residual_decreases_with_paths():
    p = get_problem("jumpcall1d")
    res = []
    for paths in (10_000, 60_000):
        b = make_bundle(p, paths, 40, seed=13)
        sol = solve_system(p.driver, b, extras=p.extra_basis)
        res.append(jump_residual(sol, b)[0])
    assert res[1] < res[0]


def test_evaluate_constant_fit():
    p = get_problem("martingale1d")
    driver = DriverSpec(
        m=1,
        h=p.driver.h,
        g=(lambda x: np.full(x.shape[0], 4.0),),
        weights=p.driver.weights,
        lipschitz_bound=0.1,
    )
    b = make_bundle(p, 5_000, 10, seed=14)
    sol = solve_system(driver, b)
    for t in (0.0, 0.33, 0.9):
        for x in (-3.0, 0.5, 7.0):
            assert sol.value_function.evaluate(t, [x], 0) == pytest.approx(4.0, rel=1e-6)


def test_evaluate_matches_stored_values_within_residual():
    p = get_problem("nonmonotone1d")
    b = make_bundle(p, 20_000, 20, seed=15)
    sol = solve_system(p.driver, b)
    vf = sol.value_function
    j = 7
    vals = vf.evaluate(b.grid.nodes[j], b.states[:, j, :], 0)
    rms = float(np.sqrt(np.mean((vals - sol.Y[:, j, 0]) ** 2)))
    stored = vf.steps[j].resid_var[0] ** 0.5
    assert rms <= stored * 1.0000001 + 1e-15


def test_nearest_node_lookup_ties_to_earlier():
    p = get_problem("martingale1d")
    b = make_bundle(p, 2_000, 10, seed=16)
    vf = solve_system(p.driver, b).value_function
    # dt = 0.1; the exact midpoint 0.15 resolves to node 1, not node 2
    assert vf.nearest_step(0.15) == 1
    assert vf.nearest_step(0.1501) == 2
    assert vf.nearest_step(-5.0) == 0
    assert vf.nearest_step(99.0) == 10


def test_driver_sees_only_the_scalar_nonlocal_argument():
    # the driver signature receives q as a vector of scalars per path;
    # record what arrives and check it matches the stored Gamma
    seen = {}

    def probe_h(t, x, y, z, q):
        seen.setdefault("shapes", []).append(np.shape(q))
        return 0.2 * q

    p = get_problem("linearjump1d")
    driver = DriverSpec(m=1, h=(probe_h,), g=p.driver.g, weights=p.driver.weights,
                        lipschitz_bound=0.2)
    b = make_bundle(p, 3_000, 8, seed=17)
    sol = solve_system(driver, b)
    assert all(s == (3_000,) for s in seen["shapes"])
    assert np.all(np.isfinite(sol.Gamma[:, : b.grid.steps, 0]))
