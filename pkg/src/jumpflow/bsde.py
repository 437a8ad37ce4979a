"""Backward regression Monte-Carlo solver for systems of BSDEs with jumps.

Conditional expectations are estimated by global ridge-regularized
polynomial regression per time step. The driver consumes its jump argument
only through the scalar q = integral of the jump increment against the
component weight, which the solver builds from the fitted value function;
that substitution is what the jump-characterization identity licenses, and
jump_residual measures it directly against the raw martingale-increment
regression.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import RegressionError
from .forward import PathBundle, TimeGrid
from .measure import LevyMeasure
from .operators import op_B

DEGENERATE_TOL = 1e-10


def regress(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ridge least squares: argmin |F c - y|^2 + rho |c|^2.

    rho = 1e-8 * trace(F'F) / n_columns, so the shrinkage is relative to the
    feature scale. targets may carry extra trailing dimensions (multi-RHS).
    """
    F = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if F.ndim != 2 or F.shape[0] < F.shape[1]:
        raise RegressionError("need at least as many rows as features")
    if y.shape[0] != F.shape[0]:
        raise RegressionError("feature/target row mismatch")
    if not np.all(np.isfinite(F)) or not np.all(np.isfinite(y)):
        raise RegressionError("non-finite values in regression inputs")
    G = F.T @ F
    rho = 1e-8 * np.trace(G) / F.shape[1]
    G[np.diag_indices_from(G)] += rho
    coef = cho_solve(cho_factor(G), F.T @ y)
    if not np.all(np.isfinite(coef)):
        raise RegressionError("regression produced non-finite coefficients")
    return coef


@dataclass
class BasisParams:
    """Per-step standardization: state stage, then per-column stage."""

    state_center: np.ndarray
    state_scale: np.ndarray
    col_center: np.ndarray
    col_scale: np.ndarray


class BasisSpec:
    """Polynomial features of total degree <= degree, plus optional extras.

    extras are callables f(t, x)->(n,) appended as additional columns (used
    e.g. to put a kinked payoff into the span). The state is standardized
    first, then every non-intercept column individually, so a constant
    target loads exactly on the intercept and the normal matrix stays well
    scaled.
    """

    def __init__(self, state_dim: int, degree: int = 3, extras=()):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.state_dim = state_dim
        self.degree = degree
        self.extras = tuple(extras)
        self.exponents = [
            exps
            for exps in itertools.product(range(degree + 1), repeat=state_dim)
            if 0 < sum(exps) <= degree
        ]
        self.exponents.sort(key=lambda e: (sum(e), e))

    @property
    def n_features(self) -> int:
        return 1 + len(self.exponents) + len(self.extras)

    def _raw_columns(self, t: float, x: np.ndarray, state_center, state_scale) -> np.ndarray:
        n = x.shape[0]
        xs = (x - state_center) / state_scale
        cols = np.empty((n, self.n_features - 1))
        for c, exps in enumerate(self.exponents):
            col = np.ones(n)
            for i, e in enumerate(exps):
                if e:
                    col = col * xs[:, i] ** e
            cols[:, c] = col
        for j, f in enumerate(self.extras):
            cols[:, len(self.exponents) + j] = np.asarray(f(t, x), dtype=float)
        return cols

    def calibrate(self, t: float, x: np.ndarray):
        """Standardization parameters for this sample; flags a start node
        where every state coordinate is constant."""
        state_center = x.mean(axis=0)
        state_scale = x.std(axis=0)
        floor = DEGENERATE_TOL * (1.0 + np.abs(state_center))
        degenerate = bool(np.all(state_scale < floor))
        state_scale = np.where(state_scale < floor, 1.0, state_scale)
        cols = self._raw_columns(t, x, state_center, state_scale)
        col_center = cols.mean(axis=0)
        col_scale = cols.std(axis=0)
        col_floor = DEGENERATE_TOL * (1.0 + np.abs(col_center))
        col_scale = np.where(col_scale < col_floor, 1.0, col_scale)
        return BasisParams(state_center, state_scale, col_center, col_scale), degenerate

    def design(self, t: float, x: np.ndarray, params: BasisParams) -> np.ndarray:
        n = x.shape[0]
        F = np.empty((n, self.n_features))
        F[:, 0] = 1.0
        cols = self._raw_columns(t, x, params.state_center, params.state_scale)
        F[:, 1:] = (cols - params.col_center) / params.col_scale
        return F


@dataclass
class WeightFamily:
    """Per-component jump weights gamma_i(t, x, e) -> (n,) with declared bound.

    No sign restriction: the weights may change sign across marks, and the
    driver may be decreasing in its nonlocal argument.
    """

    m: int
    gammas: tuple
    bound: float = 1.0


@dataclass
class DriverSpec:
    """Driver system in structure form plus terminal conditions.

    h[i](t, x, ybar, z, q) -> (n,) with x (n,k), ybar (n,m), z (n,d), q (n,);
    g[i](x) -> (n,). lipschitz_bound is the declared Lipschitz constant of
    h in (ybar, z, q).
    """

    m: int
    h: tuple
    g: tuple
    weights: WeightFamily
    lipschitz_bound: float = 1.0


@dataclass
class StepFit:
    t: float
    params: BasisParams
    coefs: np.ndarray       # (m, B)
    g_inv: np.ndarray       # (B, B), inverse of the regularized normal matrix
    resid_var: np.ndarray   # (m,)
    cond: float
    degenerate: bool


class ValueFunction:
    """Per-step regression representation of the solution components.

    Interior steps hold basis fits; the terminal step stores the terminal
    functions themselves, so evaluation at the horizon is exact. The basis
    is polynomial (possibly payoff-augmented), hence of polynomial growth;
    max_degree is the growth certificate.
    """

    def __init__(self, grid: TimeGrid, m: int, basis: BasisSpec):
        self.grid = grid
        self.m = m
        self.basis = basis
        self.steps: list = [None] * (grid.steps + 1)
        self.terminal = None

    @property
    def max_degree(self) -> int:
        return self.basis.degree

    def set_terminal(self, g):
        self.terminal = tuple(g)

    def nearest_step(self, t: float) -> int:
        """Nearest grid node; exact midpoints resolve to the earlier node."""
        frac = (t - self.grid.t_start) / self.grid.dt
        j = int(np.floor(frac))
        if frac - j > 0.5:
            j += 1
        return min(max(j, 0), self.grid.steps)

    def step_eval(self, j: int, x: np.ndarray, i: int) -> np.ndarray:
        if j >= self.grid.steps:
            if self.terminal is not None:
                return np.asarray(self.terminal[i](x), dtype=float)
            j = self.grid.steps
        fit = self.steps[j]
        if fit is None:
            raise ValueError(f"no fit stored at step {j}")
        if fit.degenerate and j < self.grid.steps:
            # all paths coincide here, so the fit only knows the constant
            # value at the common point; borrow the shape of the next step
            # and anchor it to that constant
            k = self.basis.state_dim
            anchor_pt = fit.params.state_center.reshape(1, k)
            const = float(self.basis.design(fit.t, anchor_pt, fit.params)[0] @ fit.coefs[i])
            shape = self.step_eval(j + 1, x, i)
            shape_at_anchor = float(self.step_eval(j + 1, anchor_pt, i)[0])
            return shape - shape_at_anchor + const
        F = self.basis.design(fit.t, x, fit.params)
        return F @ fit.coefs[i]

    def evaluate(self, t: float, x, i: int = 0):
        """Value of component i at (t, x); t snaps to the nearest grid node."""
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1 and x.size == self.basis.state_dim
        pts = x.reshape(-1, self.basis.state_dim)
        vals = self.step_eval(self.nearest_step(t), pts, i)
        return float(vals[0]) if single else vals

    def point_std_error(self, t: float, x, i: int = 0) -> float:
        """Regression standard error of the fitted value at one point."""
        j = self.nearest_step(t)
        while j < self.grid.steps and self.steps[j] is not None and self.steps[j].degenerate:
            j += 1
        if j >= self.grid.steps or self.steps[j] is None:
            return 0.0
        fit = self.steps[j]
        phi = self.basis.design(fit.t, np.asarray(x, dtype=float).reshape(1, -1), fit.params)[0]
        return float(np.sqrt(max(fit.resid_var[i] * (phi @ fit.g_inv @ phi), 0.0)))


@dataclass
class BsdeSolution:
    """Discrete solution processes on the bundle grid.

    Y[p, j, i], Z[p, j, i, l], Gamma[p, j, i] (the scalar nonlocal driver
    argument); Z and Gamma are zero at the terminal index. driver_integral
    accumulates h dt along each path; together with the terminal values it
    yields the estimator standard error of the start-point value.
    """

    Y: np.ndarray
    Z: np.ndarray
    Gamma: np.ndarray
    value_function: ValueFunction
    diagnostics: dict
    driver_integral: np.ndarray = None


@dataclass
class ReflectedSolution(BsdeSolution):
    K: np.ndarray = None                # (M, N+1) cumulative, K[:, 0] = 0
    obstacle_values: np.ndarray = None  # (M, N+1) obstacle sampled on paths


def _component_fn(u, i):
    if hasattr(u, "evaluate"):
        return lambda t, x: u.evaluate(t, x, i)
    return lambda t, x: u(t, x, i)


def _backward_solve(
    driver: DriverSpec,
    bundle: PathBundle,
    frozen_u=None,
    degree: int = 3,
    extras=(),
    obstacle=None,
    reflection: str = "max",
    penalty_eps: float = 1e-3,
):
    grid = bundle.grid
    measure = bundle.measure
    coeffs = bundle.coeffs
    X = bundle.states
    dB = bundle.brownian_increments
    counts = bundle.jump_counts
    M, d = dB.shape[0], dB.shape[2]
    N = grid.steps
    dt = grid.dt
    times = grid.nodes
    m = driver.m
    if obstacle is not None and m != 1:
        raise ValueError("the obstacle problem is scalar (m = 1)")

    basis = BasisSpec(coeffs.state_dim, degree=degree, extras=extras)
    vf = ValueFunction(grid, m, basis)
    vf.set_terminal(driver.g)

    Y = np.empty((M, N + 1, m))
    Z = np.zeros((M, N + 1, m, d))
    Q = np.zeros((M, N + 1, m))
    dK = np.zeros((M, N)) if obstacle is not None else None
    Lvals = np.zeros((M, N + 1)) if obstacle is not None else None
    for i in range(m):
        Y[:, N, i] = driver.g[i](X[:, N])
    if obstacle is not None:
        Lvals[:, N] = obstacle(times[N], X[:, N])

    frozen = [_component_fn(frozen_u, i) for i in range(m)] if frozen_u is not None else None
    per_step_diag = []
    driver_integral = np.zeros((M, m))

    for j in range(N - 1, -1, -1):
        t = times[j]
        Xj = X[:, j]
        params, degenerate = basis.calibrate(t, Xj)
        F = basis.design(t, Xj, params)
        G = F.T @ F
        rho = 1e-8 * np.trace(G) / F.shape[1]
        G[np.diag_indices_from(G)] += rho
        cho = cho_factor(G)
        g_inv = cho_solve(cho, np.eye(F.shape[1]))
        Ft = F.T

        expected = np.empty((M, m))
        for i in range(m):
            expected[:, i] = F @ cho_solve(cho, Ft @ Y[:, j + 1, i])
            # centering by the fitted conditional mean leaves the estimand
            # unchanged (E[dB | X_j] = 0) and cuts the target variance
            zt = (Y[:, j + 1, i] - expected[:, i])[:, None] * dB[:, j, :] / dt
            Z[:, j, i, :] = F @ cho_solve(cho, Ft @ zt)

        def u_next(i):
            if j + 1 == N:
                return lambda tt, xx, _g=driver.g[i]: _g(xx)
            return lambda tt, xx, _i=i: vf.step_eval(j + 1, xx, _i)

        if measure.n_atoms:
            for i in range(m):
                source = frozen[i] if frozen is not None else u_next(i)
                Q[:, j, i] = op_B(
                    lambda tt, xx, _s=source: _s(tt, xx),
                    driver.weights.gammas[i],
                    coeffs.beta,
                    measure,
                    t,
                    Xj,
                )

        ybar = np.empty((M, m))
        for i in range(m):
            ybar[:, i] = u_next(i)(t, Xj)
        ycand = np.empty((M, m))
        for i in range(m):
            ycand[:, i] = expected[:, i] + driver.h[i](t, Xj, ybar, Z[:, j, i, :], Q[:, j, i]) * dt
        for i in range(m):
            hval = driver.h[i](t, Xj, ycand, Z[:, j, i, :], Q[:, j, i])
            driver_integral[:, i] += hval * dt
            yhat = expected[:, i] + hval * dt
            if not np.all(np.isfinite(yhat)):
                raise RegressionError(f"non-finite driver output at step {j}")
            if obstacle is not None:
                lj = obstacle(t, Xj)
                Lvals[:, j] = lj
                if reflection == "max":
                    ynew = np.maximum(yhat, lj)
                elif reflection == "penalty":
                    # implicit penalty step, solvable in closed form because
                    # the penalty is piecewise linear in the unknown
                    r = dt / penalty_eps
                    ynew = np.maximum(yhat, (yhat + r * lj) / (1.0 + r))
                else:
                    raise ValueError(f"unknown reflection mode {reflection!r}")
                dK[:, j] = ynew - yhat
                Y[:, j, i] = ynew
            else:
                Y[:, j, i] = yhat

        coefs = np.empty((m, F.shape[1]))
        resid_var = np.empty(m)
        for i in range(m):
            coefs[i] = cho_solve(cho, Ft @ Y[:, j, i])
            resid = Y[:, j, i] - F @ coefs[i]
            resid_var[i] = float(np.mean(resid**2))
        vf.steps[j] = StepFit(
            t=t,
            params=params,
            coefs=coefs,
            g_inv=g_inv,
            resid_var=resid_var,
            cond=float(np.linalg.cond(G)),
            degenerate=degenerate,
        )
        per_step_diag.append(
            {
                "step": j,
                "time": float(t),
                "resid_rms": [float(np.sqrt(v)) for v in resid_var],
                "cond": vf.steps[j].cond,
            }
        )

    diagnostics = {"per_step": list(reversed(per_step_diag)), "degree": degree, "paths": M, "steps": N}
    if obstacle is not None:
        K = np.concatenate([np.zeros((M, 1)), np.cumsum(dK, axis=1)], axis=1)
        return ReflectedSolution(
            Y=Y, Z=Z, Gamma=Q, value_function=vf, diagnostics=diagnostics,
            driver_integral=driver_integral, K=K, obstacle_values=Lvals
        )
    return BsdeSolution(Y=Y, Z=Z, Gamma=Q, value_function=vf, diagnostics=diagnostics,
                        driver_integral=driver_integral)


def solve_system(
    driver: DriverSpec,
    bundle: PathBundle,
    frozen_u=None,
    degree: int = 3,
    extras=(),
) -> BsdeSolution:
    """Solve the BSDE system by backward induction on the bundle.

    With frozen_u the nonlocal driver argument is built from the supplied
    function (the frozen-term equation of the existence construction);
    otherwise it is built self-consistently from the running backward fit.
    """
    return _backward_solve(driver, bundle, frozen_u=frozen_u, degree=degree, extras=extras)


def evaluate(value_function: ValueFunction, t: float, x, i: int = 0):
    return value_function.evaluate(t, x, i)


def estimator_std_error(solution: BsdeSolution, driver: DriverSpec, bundle: PathBundle, i: int = 0) -> float:
    """Monte-Carlo standard error of the start-point value estimate.

    Backward induction with mean-preserving fits makes the start value the
    path average of g(X_T) + integral of h dt (+ K_T when reflected), so
    that sample's spread gives the estimator noise.
    """
    sample = driver.g[i](bundle.states[:, -1]) + solution.driver_integral[:, i]
    K = getattr(solution, "K", None)
    if K is not None:
        sample = sample + K[:, -1]
    return float(np.std(sample) / np.sqrt(bundle.n_paths))


def jump_residual(solution: BsdeSolution, bundle: PathBundle) -> np.ndarray:
    """Relative L2 mismatch between the two jump-component estimates.

    The direct estimate regresses the compensated per-atom jump increment of
    Y (normalized by weight * dt, the Poisson isometry scaling) on the step
    basis; the value-function estimate is u(x + beta) - u(x). The norm runs
    over (path, step, atom) with weight * dt weighting; the degenerate start
    node (no spatial support) is excluded. Returns one ratio per component.
    """
    measure = bundle.measure
    vf = solution.value_function
    m = solution.Y.shape[2]
    if measure.n_atoms == 0:
        return np.zeros(m)
    grid = bundle.grid
    dt = grid.dt
    X = bundle.states
    counts = bundle.jump_counts
    num = np.zeros(m)
    den = np.zeros(m)
    for j in range(grid.steps):
        fit = vf.steps[j]
        if fit is None or fit.degenerate:
            continue
        t = grid.nodes[j]
        Xj = X[:, j]
        F = vf.basis.design(fit.t, Xj, fit.center, fit.scale)
        proj = fit.g_inv @ F.T
        for a in range(measure.n_atoms):
            w = measure.weights[a]
            shifted = Xj + bundle.coeffs.beta(t, Xj, measure.marks[a])
            comp = counts[:, j, a].astype(float) - w * dt
            for i in range(m):
                # Y_j is X_j-measurable, so subtracting it only reduces variance
                target = (solution.Y[:, j + 1, i] - solution.Y[:, j, i]) * comp / (w * dt)
                direct = F @ (proj @ target)
                du = vf.step_eval(j, shifted, i) - vf.step_eval(j, Xj, i)
                num[i] += w * dt * float(np.mean((direct - du) ** 2))
                den[i] += w * dt * float(np.mean(du**2))
    out = np.zeros(m)
    for i in range(m):
        out[i] = np.sqrt(num[i] / den[i]) if den[i] > 0 else 0.0
    return out
