import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import beta

import oracles
from toricenv import bergman as B
from toricenv.envelopes import max_envelope
from toricenv.grid import BoxGrid
from toricenv.metrics import ReferenceMetric
from toricenv.polytope import Polytope


def setup(name, k, points=None):
    m = ReferenceMetric.builtin(name)
    phi = m.sample(BoxGrid.cube(m.n, points=points))
    return m, phi, B.monomial_norms(phi, k, m.polytope, 0, metric=m)


P1, PHI1, BASIS8 = setup("p1", 8)


def test_interval_norms_are_beta_values():
    _, _, basis = setup("p1", 2)
    assert basis.norms_sq[0] == pytest.approx(oracles.P1_NORM_K2_A0, rel=1e-12)
    assert basis.norms_sq[1] == pytest.approx(oracles.P1_NORM_K2_A1, rel=1e-12)
    for a, v in zip(BASIS8.alphas[:, 0], BASIS8.norms_sq):
        assert v == pytest.approx(beta(a + 1, 8 - a + 1), rel=1e-12)


@pytest.mark.parametrize("k", [2, 4])
def test_simplex_norms_match_frozen_values(k):
    _, _, basis = setup("simplex", k)
    lookup = {tuple(int(c) for c in a): v for a, v in zip(basis.alphas, basis.norms_sq)}
    for (a1, a2, kk), ref in oracles.SIMPLEX_NORMS.items():
        if kk == k:
            assert lookup[(a1, a2)] == pytest.approx(ref, rel=5e-12)


def test_square_norms_factor():
    _, _, basis = setup("p1xp1", 3)
    for (a1, a2), v in zip(basis.alphas, basis.norms_sq):
        assert v == pytest.approx(beta(a1 + 1, 4 - a1) * beta(a2 + 1, 4 - a2), rel=1e-11)


def test_full_basis_kernel_is_constant():
    # for ln(1 + e^x) the full Bergman function equals k + 1 everywhere
    values, empty = B.partial_bergman(BASIS8, PHI1, 0)
    assert not empty
    assert np.allclose(values.values, 9.0, rtol=1e-11)


def test_top_level_is_a_single_section():
    _, _, basis = setup("p1", 1)
    values, _ = B.partial_bergman(basis, PHI1, 1)
    sigma = 1 / (1 + np.exp(-PHI1.grid.axes[0]))
    assert np.allclose(values.values, 2 * sigma, rtol=1e-11)


def test_empty_subbasis_flag():
    values, empty = B.partial_bergman(BASIS8, PHI1, 1.5)
    assert empty
    assert np.all(values.values == 0)


@given(st.integers(1, 200), st.fractions(0, 1, max_denominator=50))
def test_filtration_threshold_is_exact(k, lam):
    assert B.filtration_threshold(k, lam) == -(-k * lam.numerator // lam.denominator)
    assert B.is_jumping_level(k, lam) == ((k * lam).denominator == 1)


def test_decimal_levels_do_not_round_up():
    # 10 * 0.3 is 3.0000000000000004 in binary floating point
    assert B.filtration_threshold(10, 0.3) == 3
    assert B.is_jumping_level(10, 0.3)


@given(st.fractions(0, 1), st.fractions(0, 1))
def test_partial_bergman_decreases_in_lambda(a, b):
    lo, hi = sorted((a, b))
    assert np.all(B.log_bergman(BASIS8, PHI1, hi) <= B.log_bergman(BASIS8, PHI1, lo) + 1e-12)


def test_section_exhaustion_range_and_value():
    _, _, basis = setup("p1", 64)
    H = B.section_exhaustion(basis, PHI1)
    assert H.values.min() >= 0 and H.values.max() <= 1
    j = int(np.argmin(np.abs(PHI1.grid.axes[0] - 8)))
    assert H.values[j] == pytest.approx(oracles.SIGMA_8, abs=0.05)


def test_phong_sturm_identities():
    g = PHI1.grid
    ps0 = B.phong_sturm_metric(BASIS8, PHI1, 0.0).values
    # at t = 0 the metric is phi + k^-1 ln B_k
    assert np.allclose(ps0, PHI1.values + B.log_bergman(BASIS8, PHI1, 0) / 8, atol=1e-12)
    # a shift in t is a translation along the divisor axis
    s = 8
    pst = B.phong_sturm_metric(BASIS8, PHI1, s * g.h).values
    assert np.allclose(pst[:-s], ps0[s:], atol=1e-12)
    with pytest.raises(ValueError):
        B.phong_sturm_metric(BASIS8, PHI1, -1.0)


def test_h0_growth_examples():
    out = B.h0_growth(Polytope.interval(), 0, 0.5, [10, 100])
    assert out["rows"][1]["normalized"] == pytest.approx(oracles.H0_INTERVAL_K100)
    assert out["rows"][0]["jumping"] and out["slice_volume"] == 0.5
    sq = B.h0_growth(Polytope.box([(0, 1), (0, 1)]), 0, Fraction(1, 2), [10, 11])
    assert sq["rows"][0]["normalized"] == pytest.approx(oracles.H0_SQUARE_K10)
    assert not sq["rows"][1]["jumping"]


def test_tame_constant_at_lambda_zero():
    res = B.tame_upper_bound_check(BASIS8, PHI1, 0, PHI1, np.ones(PHI1.grid.shape, bool))
    assert res["min_valid_C"] == pytest.approx(1 + 1 / 8, rel=1e-10)
    assert res["lower"] == pytest.approx(9.0, rel=1e-10)


def test_tame_bound_holds_at_half():
    env = max_envelope(PHI1, 0.5, 0, P1.polytope).envelope
    region = np.abs(PHI1.grid.axes[0]) <= 8
    res = B.tame_upper_bound_check(BASIS8, PHI1, 0.5, env, region)
    assert 0 < res["lower"] and res["min_valid_C"] < 10


def test_cell_aggregation_conserves_weights():
    coarse = BoxGrid.cube(1, 2.0, 5)
    fine = coarse.refine(4)
    (A,) = B.cell_aggregation(coarse, fine)
    w = np.full(fine.m[0], fine.h)
    w[[0, -1]] /= 2
    assert np.allclose(A.sum(axis=0), w)
    assert A.sum() == pytest.approx(4.0)


def test_cell_masses_sum_to_normalized_count():
    masses = B.bergman_cell_masses(BASIS8, PHI1, 0.5, metric=P1)
    count = BASIS8.subbasis(0.5).sum() / 8
    # the box holds all but the thin exponential tails
    assert masses.sum() == pytest.approx(count, rel=1e-6)
    pv = B.parseval_check(BASIS8, PHI1, 0.5)
    assert pv["relative_error"] <= 1e-9


def test_basis_csv():
    text = BASIS8.csv_text().splitlines()
    assert text[0] == "alpha_1,norm_sq"
    assert len(text) == 10
    assert float(text[1].split(",")[1]) == pytest.approx(1 / 9)


def test_basis_cap():
    m = ReferenceMetric.builtin("simplex3")
    with pytest.raises(ValueError):
        B.monomial_norms(m.sample(BoxGrid.cube(3, points=5)), 200, m.polytope, metric=m)


def test_trapezoid_of_constant_is_box_length():
    assert B.log_integrals(BoxGrid.cube(1, 1.0, 3), np.zeros((3, 1)), tails=False)[0] == pytest.approx(math.log(2.0))
