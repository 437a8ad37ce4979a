import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpflow import IntegrationError, LevyMeasure, stream
from jumpflow.measure import integrate, sample_jumps, total_mass


def test_total_mass_single_atom():
    m = LevyMeasure([((1.0,), 2.0)])
    assert total_mass(m) == 2.0


def test_total_mass_empty():
    assert LevyMeasure.empty().total_mass == 0.0


def test_total_mass_two_atoms():
    m = LevyMeasure([((1.0,), 0.5), ((-1.0,), 1.5)])
    assert m.total_mass == 2.0


def test_atom_at_origin_rejected():
    with pytest.raises(ValueError):
        LevyMeasure([((0.0,), 1.0)])


def test_nonpositive_weight_rejected():
    with pytest.raises(ValueError):
        LevyMeasure([((1.0,), 0.0)])
    with pytest.raises(ValueError):
        LevyMeasure([((1.0,), -2.0)])


def test_mark_dimension_checked():
    with pytest.raises(ValueError):
        LevyMeasure([((1.0, 2.0), 1.0)], mark_dim=1)


def test_integrate_constant_gives_mass():
    m = LevyMeasure([((0.4,), 1.25), ((-0.3,), 0.75)])
    assert integrate(m, lambda e: 1.0) == pytest.approx(m.total_mass, abs=0)


def test_integrate_zero():
    m = LevyMeasure([((0.4,), 1.25)])
    assert integrate(m, lambda e: 0.0) == 0.0


def test_integrate_hand_sum():
    # 2 * 1 + 1 * (-1) = 1
    m = LevyMeasure([((1.0,), 2.0), ((-1.0,), 1.0)])
    assert integrate(m, lambda e: float(e[0])) == pytest.approx(1.0, abs=0)


def test_integrate_nonfinite_integrand():
    m = LevyMeasure([((1.0,), 1.0)])
    with pytest.raises(IntegrationError):
        integrate(m, lambda e: float("inf"))


@settings(max_examples=60, derandomize=True)
@given(
    atoms=st.lists(
        st.tuples(
            st.floats(-4, 4).filter(lambda v: abs(v) > 1e-3),
            st.floats(0.01, 5.0),
        ),
        min_size=1,
        max_size=6,
    ),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
)
def test_integrate_linear_in_integrand(atoms, a, b):
    m = LevyMeasure([((mark,), w) for mark, w in atoms])
    phi = lambda e: float(e[0])
    psi = lambda e: float(e[0]) ** 2
    combined = integrate(m, lambda e: a * phi(e) + b * psi(e))
    split = a * integrate(m, phi) + b * integrate(m, psi)
    assert combined == pytest.approx(split, rel=1e-12, abs=1e-12)


def test_sample_jumps_empty_measure():
    assert sample_jumps(LevyMeasure.empty(), (0.0, 1.0), stream(1, 0)) == []


def test_sample_jumps_sorted_and_inside_interval():
    m = LevyMeasure([((1.0,), 5.0)])
    recs = sample_jumps(m, (0.25, 0.75), stream(7, 0))
    times = [r.time for r in recs]
    assert times == sorted(times)
    assert all(0.25 <= t <= 0.75 for t in times)
    assert all(r.mark == (1.0,) for r in recs)


def test_sample_jumps_same_seed_identical():
    m = LevyMeasure([((1.0,), 1.0), ((-0.5,), 2.0)])
    a = sample_jumps(m, (0.0, 2.0), stream(123, 4))
    b = sample_jumps(m, (0.0, 2.0), stream(123, 4))
    assert a == b


def test_sample_jumps_poisson_mean():
    # mean count over 1e5 unit intervals must sit within 4 standard errors
    m = LevyMeasure([((1.0,), 3.0)])
    n = 100_000
    rng = stream(2024, 0)
    counts = np.fromiter((len(m.sample_jumps(0.0, 1.0, rng)) for _ in range(n)), dtype=float)
    se = np.sqrt(3.0 / n)
    assert abs(counts.mean() - 3.0) < 4 * se


def test_sample_jumps_mark_frequencies():
    m = LevyMeasure([((1.0,), 1.0), ((2.0,), 3.0)])
    rng = stream(55, 0)
    recs = m.sample_jumps(0.0, 30_000.0 / m.total_mass, rng)
    picks = np.array([r.mark[0] for r in recs])
    freq1 = np.mean(picks == 1.0)
    se = np.sqrt(0.25 * 0.75 / len(picks))
    assert abs(freq1 - 0.25) < 3 * se
    assert abs((1.0 - freq1) - 0.75) < 3 * se


def test_square_integrability_assertion_holds():
    m = LevyMeasure([((0.1,), 1.0), ((5.0,), 0.1)])
    sq = float(np.minimum(1.0, np.sum(m.marks**2, axis=1)) @ m.weights)
    assert np.isfinite(sq)
