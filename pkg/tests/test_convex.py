import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from toricenv import _kernels as K
from toricenv.convex import (
    biconjugate, convexify, feasible_mask, dual_grid_for, gradient, legendre_transform, lower_hull, ma_measure,
    second_difference_sup,
)
from toricenv.grid import BoxGrid, GridFn
from toricenv.metrics import ReferenceMetric
from toricenv.polytope import Polytope, SliceConstraint


@pytest.fixture(scope="module")
def p1():
    m = ReferenceMetric.builtin("p1")
    return m, m.sample(BoxGrid.cube(1))


def test_conjugate_at_half(p1):
    m, f = p1
    fstar = legendre_transform(f, m.polytope)
    j = int(np.argmin(np.abs(fstar.points[:, 0] - 0.5)))
    assert fstar.feasible_values[j] == pytest.approx(oracles.P1_CONJUGATE_HALF, abs=1e-6)


def test_conjugate_matches_entropy(p1):
    m, f = p1
    fstar = legendre_transform(f, m.polytope)
    a = fstar.points[:, 0]
    exact = np.array([oracles.p1_conjugate(v) for v in a])
    inner = (a > 0.01) & (a < 0.99)
    assert np.max(np.abs(fstar.feasible_values - exact)[inner]) <= 1e-3


@pytest.mark.parametrize("name", ["p1", "simplex", "p1xp1"])
def test_involution(name):
    m = ReferenceMetric.builtin(name)
    f = m.sample(BoxGrid.cube(m.n))
    back = biconjugate(legendre_transform(f, m.polytope), f.grid)
    assert np.max(np.abs(back.values - f.values)) <= 2 * f.grid.h


def test_separable_equals_direct():
    m = ReferenceMetric.builtin("p1xp1")
    f = m.sample(BoxGrid.cube(2, points=33))
    a = legendre_transform(f, m.polytope, method="separable")
    b = legendre_transform(f, m.polytope, method="direct")
    assert np.array_equal(a.values[a.mask], b.values[b.mask])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=40), st.floats(-3, 3))
def test_llt_matches_brute_force(ys, slope):
    x = np.linspace(-2, 2, len(ys))
    f = np.asarray(ys)
    s = np.array([slope - 1, slope, slope + 1])
    brute = np.max(s[:, None] * x[None, :] - f[None, :], axis=1)
    assert np.allclose(K.llt_1d(x, f, s), brute, atol=1e-12)


def test_feasible_mask_is_exact():
    P = Polytope.simplex(2)
    g = dual_grid_for(P, 5)
    mask = feasible_mask(P, g, SliceConstraint(0, 0.5))
    pts = g.points()[mask.ravel()]
    assert np.all(pts[:, 0] >= 0.5) and np.all(pts.sum(axis=1) <= 1)
    # steps of 1/4: a_1 = 1/2 admits three a_2 values, 3/4 two and 1 one
    assert mask.sum() == 6


def test_ma_total_mass():
    for name, vol in (("p1", 1.0), ("simplex", 0.5), ("p1xp1", 1.0)):
        m = ReferenceMetric.builtin(name)
        mu = ma_measure(m.sample(BoxGrid.cube(m.n)))
        assert mu.total == pytest.approx(vol, abs=1e-7)


def test_ma_of_quadratic_is_lebesgue():
    g = BoxGrid.cube(2, 2.0, 21)
    X, Y = g.mesh()
    mu = ma_measure(GridFn(g, 0.5 * (X ** 2 + Y ** 2)))
    inner = g.interior_mask()
    assert np.allclose(mu.mass[inner], g.h ** 2)
    assert np.all(mu.mass[~inner] == 0)


def test_ma_of_kink_is_a_point_mass():
    g = BoxGrid.cube(1, 1.0, 21)
    mu = ma_measure(GridFn(g, np.abs(g.axes[0])))
    assert mu.total == pytest.approx(2.0)
    assert mu.mass[10] == pytest.approx(2.0)


def test_lower_hull_of_affine_data():
    g = BoxGrid.cube(2, 1.0, 5)
    X, Y = g.mesh()
    hull = lower_hull(GridFn(g, 2 * X - Y + 3))
    assert np.allclose(hull.grads, [[2.0, -1.0]])


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_convexify_is_largest_convex_minorant(vals):
    g = BoxGrid.cube(1, 1.0, 9)
    f = GridFn(g, np.asarray(vals))
    c = convexify(f)
    assert np.all(c.values <= f.values + 1e-12)
    assert c.convexity_violation() <= 1e-9
    # any chord of the data lies above the envelope
    x = g.axes[0]
    for i in range(9):
        for j in range(i + 2, 9):
            t = (x[i + 1:j] - x[i]) / (x[j] - x[i])
            assert np.all(c.values[i + 1:j] <= (1 - t) * f.values[i] + t * f.values[j] + 1e-9)


def test_second_difference_of_quadratic():
    g = BoxGrid.cube(1, 2.0, 33)
    assert second_difference_sup(GridFn(g, 0.5 * g.axes[0] ** 2)) == pytest.approx(1.0)


def test_gradient_shape(p1):
    _, f = p1
    assert gradient(f).shape == (1, 513)


def test_nonconvex_input_rejected():
    g = BoxGrid.cube(1, 1.0, 9)
    with pytest.raises(ValueError):
        ma_measure(GridFn(g, np.cos(3 * g.axes[0])))


def test_three_dimensional_hull_ranges():
    m = ReferenceMetric.builtin("cube3")
    f = m.sample(BoxGrid.cube(3, points=17))
    hull = lower_hull(f)
    grad = m.gradient(f.grid.points())
    inner = f.grid.region_mask(-8, 8).ravel()
    assert np.all(hull.gmin[inner] <= grad[inner] + 1e-9)
    assert np.all(hull.gmax[inner] >= grad[inner] - 1e-9)
    assert math.isclose(float(hull.envelope.max()), float(f.values.max()))
