from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from toricenv.convex import lower_hull, ma_measure
from toricenv.envelopes import equilibrium_check, exhaustion, max_envelope
from toricenv.grid import BoxGrid
from toricenv.metrics import ReferenceMetric
from toricenv.okounkov import (
    Histogram1D, MassMismatchError, cdf_distance, compare_pushforwards, consistency_triangle, pushforward_H,
    pushforward_polytope, uniform_edges,
)
from toricenv.polytope import Polytope, SliceConstraint, slice_volume


def exhaustion_pushforward(name, points=None, spread="point", bins=64):
    m = ReferenceMetric.builtin(name)
    phi = m.sample(BoxGrid.cube(m.n, points=points))
    hull = lower_hull(phi)
    H = exhaustion(phi, 0, m.polytope, hull=hull)
    mu = ma_measure(phi, hull=hull)
    return m, phi, mu, pushforward_H(H, mu, bins, spread)


def test_edges_are_exact():
    e = uniform_edges(0, 1, 3)
    assert e[1] == Fraction(1, 3) and e[-1] == 1
    with pytest.raises(ValueError):
        uniform_edges(1, 0)


def test_identical_histograms_have_zero_distance():
    h = pushforward_polytope(Polytope.simplex(2), 0)
    assert cdf_distance(h, h) == 0.0


def test_atom_against_uniform():
    uniform = Histogram1D([0, 0.5, 1], [0.5, 0.5])
    atom = Histogram1D([0, 0.5, 1], [0.0, 1.0])
    assert cdf_distance(uniform, atom) == pytest.approx(0.5)


def test_simplex_marginal_is_exact():
    h = pushforward_polytope(Polytope.simplex(2), 0, 16)
    ref = [oracles.simplex_bin_mass(a, b) for a, b in zip(h.edges[:-1], h.edges[1:])]
    assert np.allclose(h.masses, ref, rtol=0, atol=1e-15)
    assert h.total == pytest.approx(0.5)


@given(st.integers(1, 80))
def test_marginal_conserves_volume(bins):
    P = Polytope([(0, 0), (2, 0), (1, 1), (0, 1)])
    assert pushforward_polytope(P, 0, bins).total == pytest.approx(float(P.volume_exact), rel=1e-14)


def test_mass_mismatch_raises():
    a = Histogram1D([0, 1], [1.0])
    b = Histogram1D([0, 1], [0.9])
    with pytest.raises(MassMismatchError):
        cdf_distance(a, b)
    assert compare_pushforwards(a, b)["cdf_distance"] is None


def test_different_edges_raise():
    with pytest.raises(ValueError):
        cdf_distance(Histogram1D([0, 1], [1.0]), Histogram1D([0, 2], [1.0]))


@pytest.mark.parametrize("spread", ["point", "uniform"])
def test_pushforward_conserves_mass(spread):
    _, _, mu, h = exhaustion_pushforward("simplex", 65, spread)
    assert h.total == pytest.approx(mu.total, rel=1e-12)


def test_pushforward_converges_under_refinement():
    poly = pushforward_polytope(Polytope.interval(), 0)
    d = [cdf_distance(exhaustion_pushforward("p1", pts)[3], poly) for pts in (257, 513)]
    assert d[1] < d[0] <= 0.05


def test_uniform_spread_matches_marginal_up_to_level_step():
    _, _, _, h = exhaustion_pushforward("p1", spread="uniform")
    poly = pushforward_polytope(Polytope.interval(), 0)
    # the cell endpoints are snapped to the lambda grid, nothing else is lost
    assert cdf_distance(h, poly) <= h.meta["delta_lambda"]


def test_consistency_triangle():
    m, phi, mu, h = exhaustion_pushforward("p1", spread="uniform")
    res = max_envelope(phi, 0.5, 0, m.polytope)
    eq = equilibrium_check(phi, res, phi_measure=mu).mass_on_contact
    vol = slice_volume(m.polytope, SliceConstraint(0, 0.5))
    tri = consistency_triangle(h, eq, vol, 0.5)
    assert tri["max_gap"] <= 0.02
    assert set(tri["values"]) == {"pushforward", "equilibrium", "slice"}


def test_mass_above_splits_bins():
    h = Histogram1D([0, 0.5, 1], [0.25, 0.75])
    assert h.mass_above(0.75) == pytest.approx(0.375)
    assert h.mass_above(0.0) == pytest.approx(1.0)


def test_histogram_csv():
    lines = Histogram1D([0, 0.5, 1], [0.25, 0.75]).csv_text().splitlines()
    assert lines == ["bin_lo,bin_hi,mass", "0.0,0.5,0.25", "0.5,1.0,0.75"]


def test_negative_mass_rejected():
    with pytest.raises(ValueError):
        Histogram1D([0, 1], [-1.0])
