from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from toricenv.convex import lower_hull
from toricenv.envelopes import (
    GeodesicRay, TestCurve, convex_sup_lambda, equilibrium_check, exhaustion, hmae_residual, lambda_grid,
    legendre_ray, max_envelope, product_envelope_check, ray_space_time_domain, right_derivative,
)
from toricenv.grid import BoxGrid
from toricenv.metrics import ReferenceMetric
from toricenv.polytope import Polytope


def sampled(name, points=None):
    m = ReferenceMetric.builtin(name)
    return m, m.sample(BoxGrid.cube(m.n, points=points))


P1, PHI1 = sampled("p1")
PHI1_SMALL = sampled("p1", 129)[1]
SIMPLEX, PHI2 = sampled("simplex", 65)


def test_lambda_grid_ends_exactly():
    g = lambda_grid(0, 1, 0.3)
    assert g[0] == 0 and g[-1] == 1 and len(g) == 5


def test_closed_form_envelope():
    env = max_envelope(PHI1, 0.5, 0, P1.polytope).envelope
    exact = np.array([oracles.p1_envelope_half(v) for v in PHI1.grid.axes[0]])
    assert np.max(np.abs(env.values - exact)) <= 2 * PHI1.grid.h


def test_identity_below_lambda_min():
    res = max_envelope(PHI2, 0.0, 0, SIMPLEX.polytope)
    assert np.array_equal(res.envelope.values, PHI2.values)
    assert res.contact_mask.all()


def test_sentinel_at_lambda_max():
    res = max_envelope(PHI2, 1.0, 0, SIMPLEX.polytope)
    assert res.envelope.is_sentinel
    assert not res.contact_mask.any()


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_envelope_is_convex_minorant_monotone_in_lambda(a, b):
    lo, hi = sorted((a, b))
    e_lo = max_envelope(PHI1_SMALL, lo, 0, P1.polytope).envelope
    e_hi = max_envelope(PHI1_SMALL, hi, 0, P1.polytope).envelope
    tol = 1e-10 * (1 + PHI1_SMALL.scale())
    assert np.all(e_lo.values <= PHI1_SMALL.values + tol)
    assert np.all(e_hi.values <= e_lo.values + tol)
    assert e_hi.convexity_violation() <= tol


def test_primal_and_dual_routes_agree():
    a = max_envelope(PHI2, 0.25, 1, SIMPLEX.polytope).envelope.values
    b = max_envelope(PHI2, 0.25, 1, SIMPLEX.polytope, method="dual").envelope.values
    # the dual route quantizes gradients to its grid, so it sits at or below the primal one
    assert np.all(b <= a + 1e-9)
    assert np.max(a - b) <= 0.02


def test_equilibrium_mass_lives_on_contact_set():
    res = max_envelope(PHI1, 0.5, 0, P1.polytope)
    rep = equilibrium_check(PHI1, res)
    assert rep.mass_off_contact <= 1e-9
    assert rep.matched_mass_error <= 1e-9
    assert rep.mass_on_contact == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize("name", ["p1", "simplex"])
def test_contact_predicate_matches_envelope(name):
    m, phi = sampled(name, 65 if name != "p1" else None)
    ex = exhaustion(phi, 0, m.polytope, delta_lambda=1 / 16)
    hull = lower_hull(phi)
    for lam in (0.25, 0.5, 0.75):
        mask = max_envelope(phi, lam, 0, m.polytope, hull=hull).contact_mask
        assert np.array_equal(mask, ex.values >= lam)


def test_exhaustion_brackets_gradient():
    ex = exhaustion(PHI1, 0, P1.polytope)
    grad = P1.gradient(PHI1.grid.points())[:, 0]
    assert np.all(ex.lower <= ex.values)
    # H is the largest level at or below the top of the subdifferential
    assert np.all(ex.values <= grad + PHI1.grid.h / 4 + 1e-12)
    assert np.all(ex.values >= grad - ex.delta_lambda - PHI1.grid.h / 4)


def test_exhaustion_cube3():
    m, phi = sampled("cube3", 17)
    ex = exhaustion(phi, 2, m.polytope, delta_lambda=1 / 32)
    assert np.nanmin(ex.values) >= 0 and np.nanmax(ex.values) <= 1
    # H depends on x_3 only and increases with it
    col = ex.cell_values()[8, 8, :]
    assert np.all(np.diff(col) >= 0)
    assert np.allclose(ex.values, ex.values[:1, :1, :])


@pytest.mark.parametrize("k", [2, 3])
def test_scaling_identity(k):
    phi = PHI1_SMALL
    scaled = phi.with_values(k * phi.values)
    big = Polytope.interval(0, k)
    a = max_envelope(scaled, Fraction(k, 2), 0, big).envelope.values
    b = max_envelope(phi, 0.5, 0, P1.polytope).envelope.values
    assert np.max(np.abs(a - k * b)) <= 1e-9 * (1 + np.abs(a).max())


def test_hmae_control_quadratic_in_time():
    g = PHI1_SMALL.grid
    t = np.linspace(0, 1, 17)
    vals = PHI1_SMALL.values[None, :] + 0.5 * t[:, None] ** 2
    ray = GeodesicRay(g, t, vals, PHI1_SMALL)
    # det of the (x, t) Hessian is phi'' * 1, maximal at x = 0
    assert hmae_residual(ray) == pytest.approx(0.25, abs=2e-3)


@pytest.fixture(scope="module")
def ray():
    return legendre_ray(PHI1_SMALL, TestCurve(0, 0.5, 1 / 32), 1.0, 9, P1.polytope)


def test_ray_starts_at_phi_and_is_convex_in_time(ray):
    assert np.allclose(ray.values[0], PHI1_SMALL.values, atol=1e-9)
    second = ray.values[2:] - 2 * ray.values[1:-1] + ray.values[:-2]
    assert second.min() >= -1e-9


def test_right_derivative_is_monotone(ray):
    rd = right_derivative(ray)
    assert rd.monotone
    assert np.all(rd.values.values >= -1e-9)
    assert np.all(rd.values.values <= 0.5 + 1e-9)


def test_convex_sup_lambda():
    t = np.linspace(0, 2, 9)
    grid = lambda_grid(0, 1, 1 / 20)
    assert convex_sup_lambda(t, 0.3 * t, grid) == (pytest.approx(0.3), True)
    assert convex_sup_lambda(t, np.zeros_like(t), grid) == (0.0, True)
    assert convex_sup_lambda(t, -t, grid) == (0.0, False)


def test_ray_space_time_domain():
    dom = ray_space_time_domain(Polytope.interval(), 0, 0.5)
    assert dom.volume_exact == Fraction(3, 8)
    assert dom.contains((Fraction(1, 2), Fraction(1, 2)))
    assert not dom.contains((Fraction(1, 4), Fraction(1, 2)))


def test_product_identity():
    f = ReferenceMetric.builtin("p1").sample(BoxGrid.cube(1, points=65))
    rep = product_envelope_check(f, f, lambda_grid(0, 1, 1 / 64))
    assert rep.one_sided <= 1e-9
    assert rep.sup_difference <= 0.03


def test_product_with_degenerate_factor():
    f = ReferenceMetric.builtin("p1").sample(BoxGrid.cube(1, points=65))
    y = f.grid.axes[0]
    g = f.with_values(y.copy())
    # the second factor has the single gradient 1, so the joint constraint a + b >= 1 is vacuous
    rep = product_envelope_check(f, g, lambda_grid(0, 1, 1 / 64), range2=(1.0, 1.0))
    lhs = rep.lhs.values
    assert np.allclose(lhs, f.values[:, None] + y[None, :], atol=1e-9)
    assert rep.sup_difference <= 1e-9
