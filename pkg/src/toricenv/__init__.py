"""Maximal envelopes, partial Bergman functions and geodesic rays for toric metrics.

A torus-invariant positive metric on a toric line bundle is a convex
function on R^n whose gradient image is the moment polytope.  This package
works with such functions sampled on box grids.
"""
from ._kernels import configure_threads
from .bergman import SectionBasis, monomial_norms, partial_bergman, section_exhaustion
from .convex import CellMeasure, LowerHull, legendre_transform, lower_hull, ma_measure
from .envelopes import EnvelopeResult, ExhaustionFn, TestCurve, exhaustion, legendre_ray, max_envelope
from .grid import BoxGrid, GridFn
from .metrics import ReferenceMetric
from .okounkov import Histogram1D, cdf_distance, pushforward_H, pushforward_polytope
from .polytope import Polytope, SliceConstraint, lattice_points, slice_volume

__version__ = "0.1.0"

__all__ = [
    "BoxGrid", "CellMeasure", "EnvelopeResult", "ExhaustionFn", "GridFn", "Histogram1D", "LowerHull",
    "Polytope", "ReferenceMetric", "SectionBasis", "SliceConstraint", "TestCurve", "cdf_distance",
    "configure_threads", "exhaustion", "lattice_points", "legendre_ray", "legendre_transform",
    "lower_hull", "ma_measure", "max_envelope", "monomial_norms", "partial_bergman",
    "pushforward_H", "pushforward_polytope", "section_exhaustion", "slice_volume",
]
