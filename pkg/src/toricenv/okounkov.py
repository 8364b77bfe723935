"""Pushforwards of the Monge-Ampere measure to the lambda line.

The exhaustion function pushes MA(phi) forward to a measure on [lam_min,
lam_max]; for the toric coordinate flag this should match the marginal of
Lebesgue measure on the polytope along the chosen coordinate.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .convex import CellMeasure
from .envelopes import ExhaustionFn
from .polytope import Polytope, as_fraction

DEFAULT_BINS = 64
MASS_MISMATCH = 0.05


class MassMismatchError(ValueError):
    """Raised when two histograms compared by CDF differ in total mass by more than 5%."""


@dataclass
class Histogram1D:
    """Masses on a uniform partition of [lo, hi]."""

    edges: np.ndarray
    masses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, float)
        self.masses = np.asarray(self.masses, float)
        if self.edges.shape != (len(self.masses) + 1,):
            raise ValueError("need one more edge than bins")
        if np.any(self.masses < 0):
            raise ValueError("negative bin mass")

    @property
    def bins(self) -> int:
        return len(self.masses)

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))

    def cdf(self) -> np.ndarray:
        """Cumulative mass at every edge, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.masses)])

    def mass_above(self, lam: float) -> float:
        """Mass of [lam, hi], splitting the bin containing lam linearly."""
        c = self.cdf()
        return float(c[-1] - np.interp(lam, self.edges, c))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "mass"])
        for a, b, m in zip(self.edges[:-1], self.edges[1:], self.masses):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(m))])
        return buf.getvalue()


def uniform_edges(lo, hi, bins: int = DEFAULT_BINS) -> list[Fraction]:
    lo, hi = as_fraction(lo), as_fraction(hi)
    if bins < 1 or hi <= lo:
        raise ValueError("need bins >= 1 and hi > lo")
    return [lo + (hi - lo) * Fraction(i, bins) for i in range(bins + 1)]


def pushforward_H(H: ExhaustionFn, mu: CellMeasure, bins: int = DEFAULT_BINS,
                  spread: str = "point") -> Histogram1D:
    """Push the node masses of ``mu`` forward to the lambda line through H.

    Parameters
    ----------
    spread : {"point", "uniform"}
        "point" assigns each node's mass to the bin of its cell value (the
        midpoint of [lower, H]).  "uniform" spreads it evenly over
        [lower, H]; in one dimension that interval is the node's dual cell,
        so the spread measure is the image of its mass up to the lambda
        grid step.
    """
    if H.grid != mu.grid:
        raise ValueError("exhaustion function and measure live on different grids")
    lo, hi = H.lambda_range
    v = H.cell_values().ravel()
    m = mu.mass.ravel()
    bad = np.isnan(v) & (m > 0)
    if bad.any():
        raise ValueError(f"{int(bad.sum())} nodes carry mass but have undefined exhaustion value")
    keep = m > 0
    edges = np.array([float(e) for e in uniform_edges(lo, hi, bins)])
    if spread == "point":
        idx = np.floor((v[keep] - lo) / (hi - lo) * bins).astype(np.int64)
        idx = np.clip(idx, 0, bins - 1)
        masses = np.bincount(idx, weights=m[keep], minlength=bins)
    elif spread == "uniform":
        a = H.lower.ravel()[keep][:, None]
        b = H.values.ravel()[keep][:, None]
        width = b - a
        with np.errstate(divide="ignore", invalid="ignore"):
            # atoms (width 0) on an interior edge belong to the bin above it
            frac = np.where(width > 0, np.clip((edges[None, :] - a) / width, 0.0, 1.0),
                            (edges[None, :] > a).astype(float))
        cdf = np.sum(m[keep][:, None] * frac, axis=0)
        cdf[-1] = np.sum(m[keep])
        masses = np.maximum(np.diff(cdf), 0.0)
    else:
        raise ValueError(f"unknown spread {spread!r}")
    return Histogram1D(edges, masses, {"source": "exhaustion", "grid": H.grid.to_dict(),
                                       "delta_lambda": H.delta_lambda, "spread": spread})


def pushforward_polytope(poly: Polytope, axis: int, bins: int = DEFAULT_BINS) -> Histogram1D:
    """Exact marginal of Lebesgue measure on the polytope along ``axis``.

    Bin masses are differences of exact slice volumes vol(P ∩ {a_axis >= e}).
    """
    lo, hi = poly.coordinate_range(axis)
    edges = uniform_edges(lo, hi, bins)
    vols = []
    for e in edges:
        piece = poly.clip(axis, e)
        vols.append(Fraction(0) if piece is None else piece.volume_exact)
    masses = [float(a - b) for a, b in zip(vols[:-1], vols[1:])]
    return Histogram1D(np.array([float(e) for e in edges]), np.array(masses),
                       {"source": "polytope", "polytope": poly.to_dict(), "axis": axis})


def mass_error(h1: Histogram1D, h2: Histogram1D) -> float:
    """Relative total-mass difference, against the larger total."""
    ref = max(h1.total, h2.total)
    return abs(h1.total - h2.total) / ref if ref > 0 else 0.0


def cdf_distance(h1: Histogram1D, h2: Histogram1D) -> float:
    """Sup over bin edges of |CDF1 - CDF2| after normalizing both to unit mass.

    Raises
    ------
    MassMismatchError
        If the totals differ by more than 5%.
    """
    if h1.edges.shape != h2.edges.shape or not np.allclose(h1.edges, h2.edges, rtol=0, atol=1e-12):
        raise ValueError("histograms have different bin edges")
    err = mass_error(h1, h2)
    if err > MASS_MISMATCH:
        raise MassMismatchError(f"total masses differ by {err:.3%}")
    if h1.total == 0 or h2.total == 0:
        raise MassMismatchError("empty histogram")
    return float(np.max(np.abs(h1.cdf() / h1.total - h2.cdf() / h2.total)))


def compare_pushforwards(h_exh: Histogram1D, h_poly: Histogram1D) -> dict:
    """Report with cdf distance (None on mass mismatch), mass error and bin count."""
    err = mass_error(h_exh, h_poly)
    try:
        dist = cdf_distance(h_exh, h_poly)
    except MassMismatchError:
        dist = None
    return {"cdf_distance": dist, "mass_err": err, "bins": h_exh.bins,
            "grid": h_exh.meta.get("grid")}


def consistency_triangle(h_exh: Histogram1D, equilibrium_mass: float, slice_vol: float, lam: float) -> dict:
    """Pairwise relative gaps between the three readings of vol(D_lam, MA(phi)).

    The readings are the exhaustion pushforward above lam, the equilibrium
    mass from the envelope and the exact slice volume.
    """
    above = h_exh.mass_above(lam)
    vals = {"pushforward": above, "equilibrium": float(equilibrium_mass), "slice": float(slice_vol)}
    names = list(vals)
    gaps = {}
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = vals[names[i]], vals[names[j]]
            gaps[f"{names[i]}-{names[j]}"] = abs(a - b) / max(abs(a), abs(b), 1e-300)
    return {"values": vals, "relative_gaps": gaps, "max_gap": max(gaps.values())}
