"""Forward jump-diffusion simulation on a uniform time grid.

Euler scheme with left-point coefficient evaluation; jumps are compensated
per step by the exact atomic integral of beta against the mark measure, so
the compensated jump part is a discrete martingale by construction.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SimulationError
from .measure import LevyMeasure, stream

# paths are simulated in fixed-size chunks; chunk c draws from the
# counter-based stream (seed, c), so results never depend on worker count
CHUNK = 16384


def worker_count() -> int:
    """Worker cap from JUMPFLOW_THREADS (default: all cores)."""
    raw = os.environ.get("JUMPFLOW_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_start = t_0 < ... < t_N = horizon."""

    t_start: float
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > self.t_start:
            raise ValueError("horizon must exceed t_start")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return (self.horizon - self.t_start) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_start, self.horizon, self.steps + 1)


@dataclass
class CoefficientSet:
    """Vectorized coefficient functions of the forward dynamics.

    b(t, x) -> (n, k); sigma(t, x) -> (n, k, d); beta(t, x, e) -> (n, k)
    where x has shape (n, k) and e is a single mark vector. lipschitz_bound
    is the declared constant C of the coefficient conditions; it is used by
    sample-based checks and the contraction heuristic, never inferred.
    """

    state_dim: int
    brownian_dim: int
    b: callable
    sigma: callable
    beta: callable
    lipschitz_bound: float = 1.0


@dataclass
class PathBundle:
    """Simulated forward paths plus the noise that generated them.

    states[p, j] is X at node j of path p; brownian_increments[p, j] the
    Brownian increment over step j; jump_counts[p, j, a] how many jumps of
    atom a hit step j. Within a step, jump times are irrelevant to the
    left-point Euler update, so only the per-atom counts are retained.
    """

    grid: TimeGrid
    coeffs: CoefficientSet
    measure: LevyMeasure
    states: np.ndarray
    brownian_increments: np.ndarray
    jump_counts: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def jumps(self, path: int, step: int) -> list:
        """Marks (with multiplicity) that hit the given path and step."""
        out = []
        for a in range(self.measure.n_atoms):
            out.extend([self.measure.marks[a]] * int(self.jump_counts[path, step, a]))
        return out


def _simulate_chunk(coeffs, measure, x0, grid, n, seed, chunk_id, states, dbm, counts, lo):
    rng = stream(seed, chunk_id)
    k, d = coeffs.state_dim, coeffs.brownian_dim
    N = grid.steps
    dt = grid.dt
    sqdt = np.sqrt(dt)
    dB = rng.standard_normal((n, N, d)) * sqdt
    if measure.n_atoms:
        cnt = np.empty((n, N, measure.n_atoms), dtype=np.int16)
        for a, w in enumerate(measure.weights):
            cnt[:, :, a] = rng.poisson(w * dt, size=(n, N))
    else:
        cnt = np.zeros((n, N, 0), dtype=np.int16)

    X = np.empty((n, N + 1, k))
    X[:, 0, :] = x0
    times = grid.nodes
    for j in range(N):
        t = times[j]
        xj = X[:, j, :]
        drift = coeffs.b(t, xj) * dt
        diff = np.einsum("nkd,nd->nk", coeffs.sigma(t, xj), dB[:, j, :])
        step = xj + drift + diff
        if measure.n_atoms:
            for a in range(measure.n_atoms):
                beta_a = coeffs.beta(t, xj, measure.marks[a])
                # jumps in the step minus their compensator dt * w_a * beta
                step = step + beta_a * (cnt[:, j, a : a + 1].astype(float) - measure.weights[a] * dt)
        X[:, j + 1, :] = step
    states[lo : lo + n] = X
    dbm[lo : lo + n] = dB
    counts[lo : lo + n] = cnt


def simulate_paths(
    coeffs: CoefficientSet,
    measure: LevyMeasure,
    start,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
) -> PathBundle:
    """Simulate n_paths Euler paths of the jump diffusion started at (t, x).

    start is (t0, x0); t0 must equal grid.t_start. The same (seed, n_paths)
    pair reproduces the bundle bitwise regardless of the worker count.
    """
    t0, x0 = start
    if abs(t0 - grid.t_start) > 1e-12:
        raise ValueError("start time must match grid.t_start")
    if n_paths < 1:
        raise ValueError("need n_paths >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (coeffs.state_dim,):
        raise ValueError(f"start point must have dimension {coeffs.state_dim}")

    k, d, N = coeffs.state_dim, coeffs.brownian_dim, grid.steps
    states = np.empty((n_paths, N + 1, k))
    dbm = np.empty((n_paths, N, d))
    counts = np.empty((n_paths, N, measure.n_atoms), dtype=np.int16)

    chunks = []
    lo = 0
    cid = 0
    while lo < n_paths:
        n = min(CHUNK, n_paths - lo)
        chunks.append((n, cid, lo))
        lo += n
        cid += 1

    workers = min(worker_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_simulate_chunk, coeffs, measure, x0, grid, n, seed, c, states, dbm, counts, off)
                for n, c, off in chunks
            ]
            for f in futures:
                f.result()
    else:
        for n, c, off in chunks:
            _simulate_chunk(coeffs, measure, x0, grid, n, seed, c, states, dbm, counts, off)

    if not np.all(np.isfinite(states)):
        bad = np.argwhere(~np.isfinite(states))[0]
        raise SimulationError(f"non-finite state at path {bad[0]}, step {bad[1]}")
    return PathBundle(
        grid=grid,
        coeffs=coeffs,
        measure=measure,
        states=states,
        brownian_increments=dbm,
        jump_counts=counts,
        seed=seed,
    )


def moment_statistic(bundle: PathBundle, p: int, x) -> float:
    """Monte-Carlo estimate of E[ sup_{nodes} |X_j - x|^p ] over the bundle."""
    if p < 2 or p % 2 != 0:
        raise ValueError("p must be an even integer >= 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dev = bundle.states - x[None, None, :]
    dist = np.sqrt(np.sum(dev**2, axis=2))
    return float(np.mean(np.max(dist, axis=1) ** p))


def check_coefficients(coeffs: CoefficientSet, measure: LevyMeasure, ts, xs) -> None:
    """Sample-based check of the declared coefficient bounds.

    Asserts |beta(t, x, e)| <= C (1 ^ |e|) and linear growth of b, sigma on
    the probe points. Raises ValueError on violation; not a proof.
    """
    C = coeffs.lipschitz_bound
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    for t in ts:
        bv = coeffs.b(t, xs)
        sv = coeffs.sigma(t, xs)
        growth = C * (1.0 + np.sqrt(np.sum(xs**2, axis=1)))
        if np.any(np.sqrt(np.sum(bv**2, axis=1)) > growth + 1e-12):
            raise ValueError("drift exceeds declared linear growth bound on probe points")
        if np.any(np.sqrt(np.sum(sv**2, axis=(1, 2))) > growth + 1e-12):
            raise ValueError("diffusion exceeds declared linear growth bound on probe points")
        for a in range(measure.n_atoms):
            e = measure.marks[a]
            cap = C * min(1.0, float(np.sqrt(e @ e)))
            bva = coeffs.beta(t, xs, e)
            if np.any(np.sqrt(np.sum(bva**2, axis=1)) > cap + 1e-12):
                raise ValueError(f"beta exceeds C(1 ^ |e|) at mark {e}")
