import math

import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from subexp2.conv import convolve_grid
from subexp2.infdiv import (InversionError, LevySpec, compound_poisson, invert_levy, jump_grid,
                            laplace, power, sigma_from_spec)
from subexp2.laws import GriddedMeasure, PowerTail, Restricted, exponential, point_mass, weibull


def test_levy_spec_validation():
    with pytest.raises(ValueError):
        LevySpec(0.0, 0.5, PowerTail(2.0))
    with pytest.raises(ValueError):
        LevySpec(1.0, 0.0, PowerTail(2.0))
    with pytest.raises(ValueError):  # mass below the cutoff
        LevySpec(3.0, 0.5, point_mass(2.0, 0.5))
    s = LevySpec(1.0, 0.5, weibull(0.5))
    assert isinstance(s.jump, Restricted)


def test_levy_spec_json_round_trip():
    for s in (LevySpec(1.0, 0.5, PowerTail(2.0)), LevySpec(1.0, 0.25, point_mass(2.0, 0.5))):
        t = LevySpec.from_json(s.to_json())
        x = np.array([1.5, 2.0, 7.0])
        np.testing.assert_allclose(t.tail(x), s.tail(x), rtol=1e-15)
        assert (t.cutoff, t.delta) == (s.cutoff, s.delta)


def test_atom_mass_at_origin():
    mu = compound_poisson(LevySpec(1.0, 0.5, PowerTail(2.0)))
    assert mu.tail(0.0) == pytest.approx(1 - math.exp(-0.5), rel=1e-13)
    assert mu.atom == pytest.approx(math.exp(-0.5))
    assert mu.tail(-1.0) == 1.0
    assert mu.mean() == pytest.approx(0.5 * 2.0)


def test_small_intensity_single_jump():
    d = 1e-4
    spec = LevySpec(1.0, d, PowerTail(2.0))
    x = np.array([2.0, 10.0, 100.0])
    rel = compound_poisson(spec).tail(x) / spec.tail(x) - 1
    assert np.all(np.abs(rel) < 10 * d)


def test_point_mass_jumps_match_poisson_counts():
    spec = LevySpec(1.0, 0.5, point_mass(2.0, 0.5))
    x = np.array([1.0, 3.0, 5.0, 9.0])
    for t in (1.0, 0.7, 2.5):
        got = power(compound_poisson(spec), t).tail(x)
        want = stats.poisson.sf(np.floor(x / 2), 0.5 * t)
        np.testing.assert_allclose(got, want, rtol=1e-10)


def test_power_one_is_identity_and_semigroup():
    jump = np.zeros(6)
    jump[2], jump[4] = 0.5, 0.5  # atoms at 1.5 and 2.5
    spec = LevySpec(1.0, 0.4, GriddedMeasure(0.0, 0.5, 0.0, jump))
    mu = compound_poisson(spec)
    x = np.array([2.0, 10.0, 20.5])
    np.testing.assert_array_equal(power(mu, 1.0).tail(x), mu.tail(x))

    def lattice(law, n=200):
        nodes = np.asarray(law.tail(0.5 * np.arange(n + 1)))
        return GriddedMeasure(0.0, 0.5, float(1 - law.tail(0.0)), -np.diff(nodes),
                              overflow=float(nodes[-1]))

    s, t = 0.6, 1.7
    both = convolve_grid(lattice(power(mu, s)), lattice(power(mu, t)))
    np.testing.assert_allclose(both.tail(x), power(mu, s + t).tail(x), rtol=1e-8)


def test_sigma_tends_to_jump_law_for_small_delta():
    spec = LevySpec(1.0, 1e-6, PowerTail(2.0))
    sigma = sigma_from_spec(spec, step=0.01, size=2000)
    x = np.array([2.0, 5.0, 15.0])
    np.testing.assert_allclose(sigma.tail(x), spec.jump.tail(x), rtol=1e-4)


def test_point_mass_round_trip_cells():
    spec = LevySpec(1.0, 0.5, point_mass(2.0, 0.01))
    eta, rep = invert_levy(sigma_from_spec(spec), 0.5, return_report=True)
    k = int(round(2.0 / 0.01)) - 1
    assert eta.masses[k] == pytest.approx(1.0, abs=1e-10)
    others = np.delete(eta.masses, k)
    assert np.max(np.abs(others)) < 1e-10 and abs(eta.atom) < 1e-10
    assert rep.terms > 0 and rep.negative_mass >= 0


def test_weibull_round_trip_laplace():
    spec = LevySpec(1.0, 0.5, weibull(0.5))
    eta = invert_levy(sigma_from_spec(spec, step=0.002, size=100_000), 0.5)
    for t in np.geomspace(0.1, 10, 5):
        want, _ = laplace(spec.jump, t)
        assert laplace(eta, t)[0] == pytest.approx(want, abs=1e-6)


@pytest.mark.parametrize("delta", [0.7, math.log(2)])
def test_inversion_requires_delta_below_log2(delta):
    sigma = sigma_from_spec(LevySpec(1.0, 0.5, point_mass(2.0, 0.01)))
    with pytest.raises(ValueError):
        invert_levy(sigma, delta)


def test_inversion_of_non_compound_input_is_reported():
    # a measure that is not of the form sum p_n rho^{n*} gives a visibly negative result
    g = GriddedMeasure(0.0, 1.0, 0.0, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(InversionError):
        invert_levy(g, 0.6)


def test_laplace_values():
    g = point_mass(2.0, 0.5)
    assert laplace(g, 0.0, reading="lattice")[0] == pytest.approx(g.total)
    assert laplace(point_mass(0.0), 1.3, reading="lattice")[0] == pytest.approx(1.0)
    v, bound = laplace(exponential(1.0), 1.0)
    assert v == pytest.approx(0.5, rel=1e-12) and bound < 1e-10
    # compound Poisson transform: exp(-delta (1 - L_jump))
    spec = LevySpec(1.0, 0.5, PowerTail(2.0))
    want = math.exp(-0.5 * (1 - float(2 * mp.expint(3, 1.0))))
    assert laplace(compound_poisson(spec), 1.0)[0] == pytest.approx(want, rel=1e-9)


def test_jump_grid_pads_to_size():
    g = jump_grid(LevySpec(1.0, 0.5, point_mass(2.0, 0.01)), 0.01, 4000)
    assert g.size == 4000 and g.total == pytest.approx(1.0)
