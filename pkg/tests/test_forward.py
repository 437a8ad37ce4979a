import numpy as np
import pytest

from jumpflow import CoefficientSet, LevyMeasure, SimulationError, TimeGrid, simulate_paths
from jumpflow.forward import check_coefficients, moment_statistic

# frozen by a 10^6-path brute-force run (seed family 1000..1009):
# E[sup over the N=50 grid of B_r^2] on [0, 0.1] = 0.16416 +- 0.00015
BROWNIAN_SUP_SQ = 0.16416
# calibrated once on the families below, with ~2x headroom
FLOW_M2 = 0.8
MOMENT_M = {2: 0.6, 4: 0.3}


def const_coeffs(b=0.0, sigma=0.0, k=1, d=1, C=1.0):
    def bf(t, x):
        return np.full_like(x, b)

    def sf(t, x):
        out = np.zeros((x.shape[0], k, d))
        for i in range(min(k, d)):
            out[:, i, i] = sigma
        return out

    def beta(t, x, e):
        return np.tile(np.asarray(e, dtype=float), (x.shape[0], 1))

    return CoefficientSet(k, d, bf, sf, beta, lipschitz_bound=C)


def test_no_dynamics_constant_paths():
    grid = TimeGrid(0.0, 1.0, 20)
    b = simulate_paths(const_coeffs(), LevyMeasure.empty(), (0.0, [2.5]), grid, 50, seed=1)
    assert np.all(b.states == 2.5)
    assert b.jump_counts.size == 0


def test_deterministic_drift_exact():
    # dyadic step 0.5 / 32 accumulates to exactly 0.5
    grid = TimeGrid(0.0, 0.5, 32)
    b = simulate_paths(const_coeffs(b=1.0), LevyMeasure.empty(), (0.0, [0.0]), grid, 10, seed=1)
    assert np.all(b.states[:, -1, 0] == 0.5)


def test_compensated_jumps_are_mean_zero():
    grid = TimeGrid(0.0, 1.0, 50)
    measure = LevyMeasure([((1.0,), 1.0)])
    b = simulate_paths(const_coeffs(), measure, (0.0, [0.3]), grid, 100_000, seed=8)
    xt = b.states[:, -1, 0]
    se = xt.std() / np.sqrt(len(xt))
    assert abs(xt.mean() - 0.3) < 4 * se


def test_brownian_increment_covariance():
    grid = TimeGrid(0.0, 1.0, 10)
    b = simulate_paths(const_coeffs(sigma=1.0, d=2, k=1), LevyMeasure.empty(), (0.0, [0.0]),
                       grid, 20_000, seed=3)
    dB = b.brownian_increments.reshape(-1, 2)
    n = dB.shape[0]
    cov = dB.T @ dB / n
    se_var = grid.dt * np.sqrt(2.0 / n)
    se_cov = grid.dt / np.sqrt(n)
    assert abs(cov[0, 0] - grid.dt) < 4 * se_var
    assert abs(cov[1, 1] - grid.dt) < 4 * se_var
    assert abs(cov[0, 1]) < 4 * se_cov


def test_empty_measure_matches_pure_diffusion_bitwise():
    grid = TimeGrid(0.0, 1.0, 25)
    coeffs = const_coeffs(b=0.1, sigma=0.7)
    b = simulate_paths(coeffs, LevyMeasure.empty(), (0.0, [1.0]), grid, 500, seed=21)
    x = np.full((500, 1), 1.0)
    for j in range(grid.steps):
        t = grid.nodes[j]
        x = x + coeffs.b(t, x) * grid.dt + np.einsum(
            "nkd,nd->nk", coeffs.sigma(t, x), b.brownian_increments[:, j, :]
        )
        assert np.array_equal(x, b.states[:, j + 1, :])


def test_same_seed_bitwise_across_worker_counts(monkeypatch):
    grid = TimeGrid(0.0, 0.5, 10)
    coeffs = const_coeffs(b=0.2, sigma=0.5)
    measure = LevyMeasure([((0.4,), 1.0), ((-0.3,), 0.5)])
    monkeypatch.setenv("JUMPFLOW_THREADS", "1")
    b1 = simulate_paths(coeffs, measure, (0.0, [1.0]), grid, 20_000, seed=5)
    monkeypatch.setenv("JUMPFLOW_THREADS", "2")
    b2 = simulate_paths(coeffs, measure, (0.0, [1.0]), grid, 20_000, seed=5)
    assert np.array_equal(b1.states, b2.states)
    assert np.array_equal(b1.brownian_increments, b2.brownian_increments)
    assert np.array_equal(b1.jump_counts, b2.jump_counts)


def test_moment_statistic_zero_dynamics():
    grid = TimeGrid(0.0, 1.0, 10)
    b = simulate_paths(const_coeffs(), LevyMeasure.empty(), (0.0, [0.7]), grid, 100, seed=2)
    assert moment_statistic(b, 2, [0.7]) == 0.0


def test_moment_statistic_matches_brute_force_oracle():
    grid = TimeGrid(0.0, 0.1, 50)
    b = simulate_paths(const_coeffs(sigma=1.0), LevyMeasure.empty(), (0.0, [0.0]), grid,
                       20_000, seed=4)
    stat = moment_statistic(b, 2, [0.0])
    se = np.max(b.states[:, :, 0] ** 2, axis=1).std() / np.sqrt(b.n_paths)
    assert abs(stat - BROWNIAN_SUP_SQ) < 4 * (se + 0.00016)


def test_moment_statistic_scales_linearly_in_horizon():
    full = simulate_paths(const_coeffs(sigma=1.0), LevyMeasure.empty(), (0.0, [0.0]),
                          TimeGrid(0.0, 0.1, 50), 40_000, seed=6)
    half = simulate_paths(const_coeffs(sigma=1.0), LevyMeasure.empty(), (0.0, [0.0]),
                          TimeGrid(0.0, 0.05, 50), 40_000, seed=7)
    ratio = moment_statistic(full, 2, [0.0]) / moment_statistic(half, 2, [0.0])
    assert ratio == pytest.approx(2.0, rel=0.25)


def test_moment_bound_with_calibrated_constant():
    from jumpflow import get_problem

    p = get_problem("linearjump1d")
    for power in (2, 4):
        for x0 in (0.0, 1.0, 3.0):
            b = simulate_paths(p.coeffs, p.measure, (0.0, [x0]), TimeGrid(0.0, 0.5, 50),
                               20_000, seed=13)
            stat = moment_statistic(b, power, [x0])
            assert stat <= MOMENT_M[power] * 0.5 * (1.0 + abs(x0) ** power)


def test_flow_lipschitz_estimate():
    # same seed gives both bundles identical Brownian and jump noise
    def bfun(t, x):
        return 0.5 * x

    def sfun(t, x):
        return (0.3 * x)[:, :, None]

    def beta(t, x, e):
        return 0.1 * float(e[0]) * np.cos(x)

    coeffs = CoefficientSet(1, 1, bfun, sfun, beta, lipschitz_bound=1.0)
    measure = LevyMeasure([((1.0,), 1.0)])
    grid = TimeGrid(0.0, 0.5, 50)
    for x0, dx in [(0.5, 0.05), (1.0, 0.2)]:
        b1 = simulate_paths(coeffs, measure, (0.0, [x0]), grid, 20_000, seed=31)
        b2 = simulate_paths(coeffs, measure, (0.0, [x0 + dx]), grid, 20_000, seed=31)
        diff = b2.states[:, :, 0] - b1.states[:, :, 0] - dx
        lhs = np.mean(np.max(diff**2, axis=1))
        assert lhs <= FLOW_M2 * 0.5 * dx**2


def test_nonfinite_state_raises_with_location():
    def blow_up(t, x):
        return 1e200 * x

    coeffs = CoefficientSet(1, 1, blow_up, lambda t, x: np.zeros((x.shape[0], 1, 1)),
                            lambda t, x, e: np.zeros_like(x), lipschitz_bound=1.0)
    with pytest.raises(SimulationError, match="path"):
        simulate_paths(coeffs, LevyMeasure.empty(), (0.0, [1.0]), TimeGrid(0.0, 1.0, 4), 10, seed=1)


def test_check_coefficients_flags_beta_violation():
    coeffs = const_coeffs()

    def bad_beta(t, x, e):
        return np.full_like(x, 10.0)

    bad = CoefficientSet(1, 1, coeffs.b, coeffs.sigma, bad_beta, lipschitz_bound=1.0)
    measure = LevyMeasure([((0.5,), 1.0)])
    with pytest.raises(ValueError, match="beta"):
        check_coefficients(bad, measure, [0.0], np.linspace(-1, 1, 5).reshape(-1, 1))
    # the registered problems all pass their declared bounds
    from jumpflow import get_problem

    for name in ("martingale1d", "linearjump1d", "nonmonotone1d", "american1d"):
        p = get_problem(name)
        check_coefficients(p.coeffs, p.measure, [0.0, p.horizon],
                           np.linspace(-2, 2, 7).reshape(-1, 1))


def test_start_point_dimension_checked():
    with pytest.raises(ValueError):
        simulate_paths(const_coeffs(), LevyMeasure.empty(), (0.0, [1.0, 2.0]),
                       TimeGrid(0.0, 1.0, 4), 10, seed=1)
