from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from toricenv.polytope import (
    Polytope, SliceConstraint, as_fraction, lattice_points, slice_volume, slice_volume_qmc, support_function,
)


def test_decimal_reading_of_floats():
    assert as_fraction(0.1) == Fraction(1, 10)
    assert as_fraction("1/3") == Fraction(1, 3)
    with pytest.raises(ValueError):
        as_fraction(float("inf"))


def test_simplex_halfspaces_and_volume():
    P = Polytope.simplex(2)
    assert P.volume_exact == Fraction(1, 2)
    assert len(P.halfspaces) == 3
    assert P.contains((Fraction(1, 3), Fraction(1, 3)))
    assert not P.contains((1, 1))


def test_from_halfspaces_matches_vertices():
    rows = [((-1, 0), 0), ((0, -1), 0), ((1, 1), 1)]
    assert Polytope.from_halfspaces(rows) == Polytope.simplex(2)


def test_unbounded_halfspaces_rejected():
    with pytest.raises(ValueError):
        Polytope.from_halfspaces([((-1, 0), 0), ((0, -1), 0)])


def test_degenerate_polytope_rejected():
    with pytest.raises(ValueError):
        Polytope([(0, 0), (1, 1), (2, 2)])


def test_three_dimensional_volumes():
    assert Polytope.simplex(3).volume_exact == Fraction(1, 6)
    assert Polytope.box([(0, 1)] * 3).volume_exact == 1


def test_interval_filtration_count():
    pts = lattice_points(Polytope.interval(0, 1), 100)
    assert np.sum(pts[:, 0] >= 50) / 100 == pytest.approx(oracles.H0_INTERVAL_K100)


def test_square_filtration_count():
    pts = lattice_points(Polytope.box([(0, 1), (0, 1)]), 10)
    assert np.sum(pts[:, 0] >= 5) / 100 == pytest.approx(oracles.H0_SQUARE_K10)


def test_lattice_points_lexicographic_and_typed():
    pts = lattice_points(Polytope.simplex(2), 2)
    assert pts.dtype == np.int64
    assert [tuple(p) for p in pts] == sorted(tuple(p) for p in pts)
    assert len(pts) == 6


@pytest.mark.parametrize("k", [0, -1, 1.5])
def test_lattice_points_bad_k(k):
    with pytest.raises(ValueError):
        lattice_points(Polytope.interval(), k)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 6))
def test_box_lattice_count(a, b, k):
    P = Polytope.box([(0, a), (0, b)])
    assert len(lattice_points(P, k)) == (k * a + 1) * (k * b + 1)


@given(st.integers(1, 12))
def test_simplex_lattice_count(k):
    assert len(lattice_points(Polytope.simplex(2), k)) == (k + 1) * (k + 2) // 2


def test_slice_volume_exact_two_dims():
    assert slice_volume(Polytope.simplex(2), SliceConstraint(0, 0.5)) == pytest.approx(0.125, abs=1e-15)
    assert slice_volume(Polytope.box([(0, 1), (0, 1)]), SliceConstraint(1, 0.25)) == 0.75


def test_slice_volume_clamps():
    P = Polytope.interval()
    assert slice_volume(P, SliceConstraint(0, -1)) == 1.0
    assert slice_volume(P, SliceConstraint(0, 2)) == 0.0


def test_slice_volume_qmc_three_dims():
    mean, err = slice_volume_qmc(Polytope.simplex(3), SliceConstraint(0, 0.25), samples=2**16)
    assert abs(mean - oracles.simplex3_slice(0.25)) <= 5 * err + 1e-4


@given(st.fractions(0, 1), st.fractions(0, 1))
def test_slice_volume_monotone(a, b):
    P = Polytope.simplex(2)
    lo, hi = sorted((a, b))
    assert slice_volume(P, SliceConstraint(0, lo)) >= slice_volume(P, SliceConstraint(0, hi))


@given(st.fractions(Fraction(1, 100), Fraction(99, 100)))
def test_clip_is_exact_triangle_slice(lam):
    piece = Polytope.simplex(2).clip(0, lam)
    assert piece.volume_exact == (1 - lam) ** 2 / 2


def test_serialization_round_trip():
    P = Polytope([(0, 0), (Fraction(1, 2), 0), (0, Fraction(1, 3))])
    d = P.to_dict()
    assert ["1/2", 0] in d["vertices"]
    assert Polytope.from_dict(d) == P


def test_support_function():
    P = Polytope.simplex(2)
    assert support_function(P, np.array([1.0, -1.0])) == 1.0
    assert support_function(P, np.array([-1.0, -1.0])) == 0.0


def test_slice_constraint_check():
    with pytest.raises(ValueError):
        SliceConstraint(0, 2.0).check(Polytope.interval())
    with pytest.raises(ValueError):
        SliceConstraint(0, 0.5, "<=")
