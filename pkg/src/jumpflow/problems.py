"""Built-in problem presets covering the regimes the solver must handle.

Every coefficient callable is vectorized: x has shape (n, k), drift/jump
coefficients return (n, k), sigma returns (n, k, d), weights/drivers (n,).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import DriverSpec, WeightFamily
from .forward import CoefficientSet
from .measure import LevyMeasure
from .reflected import ObstacleSpec


@dataclass
class ProblemSpec:
    """Full problem data: forward coefficients, measure, driver, obstacle."""

    name: str
    coeffs: CoefficientSet
    measure: LevyMeasure
    driver: DriverSpec
    obstacle: ObstacleSpec = None
    t_start: float = 0.0
    horizon: float = 1.0
    x0: np.ndarray = None
    probes: tuple = ()
    defaults: dict = field(default_factory=dict)
    stresses: str = ""
    closed_form: callable = None
    extra_basis: tuple = ()

    @property
    def state_dim(self):
        return self.coeffs.state_dim

    def oracle_domain(self):
        """Grid range: start point +- 6 rough path standard deviations."""
        x = self.x0.reshape(1, -1)
        sig = self.coeffs.sigma(self.t_start, x)
        var = float(np.sum(sig**2))
        for a in range(self.measure.n_atoms):
            bta = self.coeffs.beta(self.t_start, x, self.measure.marks[a])
            var += self.measure.weights[a] * float(np.sum(bta**2))
        std = np.sqrt(var * (self.horizon - self.t_start))
        half = 6.0 * max(std, 1e-3)
        return float(self.x0[0] - half), float(self.x0[0] + half)


def _const_drift(c, k=1):
    return lambda t, x: np.full_like(x, c)


def _const_sigma(s, k=1, d=1):
    def sigma(t, x):
        out = np.zeros((x.shape[0], k, d))
        for i in range(min(k, d)):
            out[:, i, i] = s
        return out

    return sigma


def _beta_mark(t, x, e):
    # jump size equals the mark, broadcast over states
    return np.tile(np.asarray(e, dtype=float), (x.shape[0], 1))


def _gamma_const(c):
    return lambda t, x, e: np.full(x.shape[0], c)


def _gamma_mark(t, x, e):
    return np.full(x.shape[0], float(np.asarray(e).reshape(-1)[0]))


def martingale1d() -> ProblemSpec:
    """Pure Brownian martingale: h = 0, g(x) = x, unit diffusion, no jumps."""
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(1.0), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure.empty()
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: np.zeros(x.shape[0]),),
        g=(lambda x: x[:, 0],),
        weights=WeightFamily(1, (_gamma_const(1.0),), bound=1.0),
        lipschitz_bound=0.1,
    )
    return ProblemSpec(
        name="martingale1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=1.0,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(paths=100_000, steps=50, degree=3),
        stresses="monotone (trivial driver)",
        closed_form=lambda t, x, i: np.asarray(x).reshape(-1, 1)[:, 0],
    )


def purejump1d() -> ProblemSpec:
    """Compensated pure-jump martingale: no drift or diffusion, one atom."""
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(0.0), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((1.0,), 1.0)])
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: np.zeros(x.shape[0]),),
        g=(lambda x: x[:, 0],),
        weights=WeightFamily(1, (_gamma_const(1.0),), bound=1.0),
        lipschitz_bound=0.1,
    )
    return ProblemSpec(
        name="purejump1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=1.0,
        x0=np.array([0.0]),
        probes=((0.0, 0.0),),
        defaults=dict(paths=100_000, steps=50, degree=2),
        stresses="monotone (jump compensation)",
        closed_form=lambda t, x, i: np.asarray(x).reshape(-1, 1)[:, 0],
    )


def linearjump1d() -> ProblemSpec:
    """Linear closed form with a live nonlocal argument: h = 0.2 q, g(x) = x.

    The weighted jump integral of a linear function is constant, so
    u(t, x) = x + 0.12 (T - t) exactly.
    """
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(0.2), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((0.3,), 2.0)])
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: 0.2 * q,),
        g=(lambda x: x[:, 0],),
        weights=WeightFamily(1, (_gamma_const(1.0),), bound=10.0 / 3.0),
        lipschitz_bound=0.2,
    )
    T = 0.5
    return ProblemSpec(
        name="linearjump1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=T,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(paths=100_000, steps=20, degree=3),
        stresses="monotone (linear, jump identity)",
        closed_form=lambda t, x, i: np.asarray(x).reshape(-1, 1)[:, 0] + 0.12 * (T - t),
    )


def jumpcall1d() -> ProblemSpec:
    """Kinked terminal with monotone nonlocal coupling: h = -0.05 y + 0.2 q."""
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(0.2), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((0.3,), 1.0)])
    payoff = lambda x: np.maximum(x[:, 0] - 1.0, 0.0)
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: -0.05 * y[:, 0] + 0.2 * q,),
        g=(payoff,),
        weights=WeightFamily(1, (_gamma_const(1.0),), bound=10.0 / 3.0),
        lipschitz_bound=0.25,
    )
    return ProblemSpec(
        name="jumpcall1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=0.5,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(paths=100_000, steps=100, degree=3, oracle_nodes=2000, oracle_steps=400),
        stresses="monotone (gamma >= 0, h increasing in q)",
        extra_basis=(lambda t, x: np.maximum(x[:, 0] - 1.0, 0.0),),
    )


def nonmonotone1d() -> ProblemSpec:
    """Headline regime: h decreasing in q, sign-changing weight.

    gamma(e) = e changes sign across the atoms and h = -0.05 y + 0.1 z - 0.5 q
    is decreasing in the nonlocal argument, so both classical monotonicity
    conditions fail. The quadratic terminal keeps the solution inside the
    regression span.
    """
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(0.2), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((0.3,), 0.5), ((-0.2,), 0.5)])
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: -0.05 * y[:, 0] + 0.1 * z[:, 0] - 0.5 * q,),
        g=(lambda x: x[:, 0] ** 2,),
        weights=WeightFamily(1, (_gamma_mark,), bound=1.0),
        lipschitz_bound=0.65,
    )
    return ProblemSpec(
        name="nonmonotone1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=0.5,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(paths=100_000, steps=100, degree=3, oracle_nodes=2000, oracle_steps=400),
        stresses="nonmonotone-in-q, sign-changing-gamma",
    )


def coupled2pair() -> ProblemSpec:
    """Two identical symmetrically coupled components (m = 2)."""
    def drift(t, x):
        return 0.2 * (1.0 - x)

    coeffs = CoefficientSet(1, 1, drift, _const_sigma(0.3), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((0.25,), 1.0)])

    def h_pair(t, x, y, z, q):
        return -0.1 * np.mean(y, axis=1) + 0.2 * q

    gsq = lambda x: x[:, 0] ** 2
    driver = DriverSpec(
        m=2,
        h=(h_pair, h_pair),
        g=(gsq, gsq),
        weights=WeightFamily(2, (_gamma_mark, _gamma_mark), bound=1.0),
        lipschitz_bound=0.3,
    )
    return ProblemSpec(
        name="coupled2pair",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        horizon=0.5,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(paths=50_000, steps=50, degree=3),
        stresses="monotone (coupled m = 2 system)",
    )


def american1d() -> ProblemSpec:
    """American-style obstacle problem: g = obstacle = (1 - x)^+, down jumps."""
    coeffs = CoefficientSet(1, 1, _const_drift(0.0), _const_sigma(0.2), _beta_mark, lipschitz_bound=1.0)
    measure = LevyMeasure([((-0.2,), 0.5)])
    payoff = lambda x: np.maximum(1.0 - x[:, 0], 0.0)
    driver = DriverSpec(
        m=1,
        h=(lambda t, x, y, z, q: -0.05 * y[:, 0],),
        g=(payoff,),
        weights=WeightFamily(1, (_gamma_mark,), bound=1.0),
        lipschitz_bound=0.1,
    )
    obstacle = ObstacleSpec(obstacle=lambda t, x: np.maximum(1.0 - x[:, 0], 0.0))

    def _hinge(k):
        return lambda t, x: np.maximum(k - x[:, 0], 0.0)

    return ProblemSpec(
        name="american1d",
        coeffs=coeffs,
        measure=measure,
        driver=driver,
        obstacle=obstacle,
        horizon=0.5,
        x0=np.array([1.0]),
        probes=((0.0, 1.0),),
        defaults=dict(
            paths=100_000, steps=100, degree=3,
            oracle_nodes=2000, oracle_steps=400, penalty_eps=1e-3,
        ),
        stresses="obstacle",
        # hinge ladder across the exercise-boundary region: the value
        # function is kinked there and a bare polynomial fit rectifies its
        # misfit upward through the reflection
        extra_basis=tuple(_hinge(k) for k in np.arange(0.70, 1.101, 0.05).round(3)),
    )


REGISTRY = {
    "martingale1d": martingale1d,
    "purejump1d": purejump1d,
    "linearjump1d": linearjump1d,
    "jumpcall1d": jumpcall1d,
    "nonmonotone1d": nonmonotone1d,
    "coupled2pair": coupled2pair,
    "american1d": american1d,
}


def get_problem(name: str) -> ProblemSpec:
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise KeyError(f"unknown problem {name!r}; registered problems: {known}")
    return REGISTRY[name]()


def problem_summaries() -> list[dict]:
    out = []
    for name in sorted(REGISTRY):
        p = REGISTRY[name]()
        out.append(
            {
                "name": name,
                "state_dim": p.coeffs.state_dim,
                "brownian_dim": p.coeffs.brownian_dim,
                "components": p.driver.m,
                "atoms": p.measure.n_atoms,
                "obstacle": p.obstacle is not None,
                "stresses": p.stresses,
            }
        )
    return out
