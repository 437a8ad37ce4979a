"""Finite jump-mark measures: atoms, Poisson sampling, exact integration.

The mark measure is represented as a finite list of atoms (mark, weight).
All integrals against it are exact weighted sums, so downstream tests never
have to budget for quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import IntegrationError


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Counter-based random stream: (seed, stream_id) fully determine output.

    Built on Philox so independent streams can be handed to parallel workers
    without any shared state; the same pair always reproduces the same draws.
    """
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be nonnegative")
    return np.random.Generator(np.random.Philox(key=[seed, stream_id]))


@dataclass(frozen=True)
class JumpRecord:
    """One Poisson jump: its time and the mark drawn from the atom set."""

    time: float
    mark: tuple

    def mark_array(self) -> np.ndarray:
        return np.asarray(self.mark, dtype=float)


class LevyMeasure:
    """Finite atomic jump-mark measure on E = R^mark_dim minus the origin.

    Parameters
    ----------
    atoms : sequence of (mark, weight)
        mark is a scalar or vector in R^mark_dim, weight a positive real.
    mark_dim : int
        Dimension of the mark space.
    """

    def __init__(self, atoms, mark_dim: int = 1):
        if mark_dim < 1:
            raise ValueError("mark_dim must be a positive integer")
        self.mark_dim = int(mark_dim)
        marks = []
        weights = []
        for mark, weight in atoms:
            m = np.atleast_1d(np.asarray(mark, dtype=float))
            if m.shape != (self.mark_dim,):
                raise ValueError(f"mark {mark!r} does not have dimension {self.mark_dim}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"mark {mark!r} is not finite")
            if np.all(m == 0.0):
                raise ValueError("atom at the origin is not allowed: marks live on E = R^d \\ {0}")
            w = float(weight)
            if not (w > 0.0 and np.isfinite(w)):
                raise ValueError(f"weight {weight!r} must be a positive finite real")
            marks.append(m)
            weights.append(w)
        self.marks = np.array(marks, dtype=float).reshape(len(marks), self.mark_dim)
        self.weights = np.array(weights, dtype=float)
        # finiteness of the total mass and of the (1 ^ |e|^2)-integral is
        # automatic for a finite atom list; assert both anyway
        assert np.isfinite(self.total_mass)
        sq = np.minimum(1.0, np.sum(self.marks**2, axis=1))
        assert np.isfinite(float(sq @ self.weights))

    @classmethod
    def empty(cls, mark_dim: int = 1) -> "LevyMeasure":
        return cls([], mark_dim=mark_dim)

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        """Total mass of the measure: the sum of the atom weights."""
        return float(np.sum(self.weights))

    def integrate(self, phi) -> float:
        """Exact integral of phi against the measure: sum of phi(mark)*weight.

        phi receives one mark vector of shape (mark_dim,) per call.
        """
        total = 0.0
        for mark, weight in zip(self.marks, self.weights):
            value = float(phi(mark))
            if not np.isfinite(value):
                raise IntegrationError(f"integrand returned non-finite value {value} at mark {mark}")
            total += value * weight
        return total

    def sample_jumps(self, t0: float, t1: float, rng: np.random.Generator) -> list[JumpRecord]:
        """Sample the jumps of a Poisson random measure on (t0, t1).

        The count is Poisson(total_mass * (t1 - t0)), times are i.i.d. uniform
        on the interval, marks i.i.d. with probability weight / total_mass.
        Records come back sorted by time.
        """
        if not t1 > t0:
            raise ValueError("need t0 < t1")
        mass = self.total_mass
        if mass == 0.0:
            return []
        count = int(rng.poisson(mass * (t1 - t0)))
        if count == 0:
            return []
        times = np.sort(rng.uniform(t0, t1, size=count))
        idx = rng.choice(self.n_atoms, size=count, p=self.weights / mass)
        return [JumpRecord(time=float(t), mark=tuple(self.marks[i])) for t, i in zip(times, idx)]

    def __repr__(self) -> str:
        return f"LevyMeasure(n_atoms={self.n_atoms}, mass={self.total_mass:g}, mark_dim={self.mark_dim})"


def total_mass(measure: LevyMeasure) -> float:
    return measure.total_mass


def integrate(measure: LevyMeasure, phi) -> float:
    return measure.integrate(phi)


def sample_jumps(measure: LevyMeasure, interval, rng: np.random.Generator) -> list[JumpRecord]:
    t0, t1 = interval
    return measure.sample_jumps(t0, t1, rng)
