"""Monomial sections, their L2 norms and partial Bergman functions.

In the torus-invariant picture the sections of L^k are the monomials z^alpha
with alpha in kP ∩ Z^n, pairwise orthogonal for any torus-invariant weight,
and

    |z^alpha|^2_{k phi}(x) = exp(<alpha, x> - k phi(x)),
    ||z^alpha||^2 = int exp(<alpha, x> - k phi(x)) rho(x) dx

for a fixed reference density rho (here the product logistic density).
Multiplier ideals of lam * x_j select alpha_j >= ceil(k lam).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .grid import BoxGrid, GridFn
from .metrics import ReferenceMetric, logistic_log_density
from .polytope import Polytope, SliceConstraint, as_fraction, lattice_points, slice_volume

BASIS_CAP = 10**5
DENSITY_ID = "logistic-product"


def _dot(alphas: np.ndarray, X: np.ndarray) -> np.ndarray:
    """<alpha, x> for all pairs, shape (len(X), len(alphas)); summed over dims in fixed order."""
    out = np.zeros((X.shape[0], alphas.shape[0]))
    for d in range(X.shape[1]):
        out += X[:, d:d + 1] * alphas[None, :, d].astype(float)
    return out


def trapezoid_log_weights(grid: BoxGrid) -> np.ndarray:
    """ln of tensor trapezoid weights on ``grid`` (flattened)."""
    w = np.zeros(grid.shape)
    for d, (h, m) in enumerate(zip(grid.spacing, grid.m)):
        wd = np.full(m, h)
        wd[0] = wd[-1] = h / 2
        shape = [1] * grid.n
        shape[d] = m
        w = w + np.log(wd).reshape(shape)
    return w.ravel()


def _tail_terms(grid: BoxGrid, logf: np.ndarray) -> np.ndarray:
    """Log-contributions of exponential tails beyond each box face.

    On a face the integrand is continued as g(x_b) exp(-beta s) with beta the
    outward decay rate from the last two nodes; the slab integral is the
    face integral of g / beta.  Columns of ``logf`` are independent integrands.
    """
    shape = grid.shape
    L = logf.reshape(shape + (-1,))
    out = []
    for d in range(grid.n):
        h = grid.spacing[d]
        other = BoxGrid(tuple(v for i, v in enumerate(grid.lo) if i != d) or (0.0,),
                        tuple(v for i, v in enumerate(grid.hi) if i != d) or (1.0,),
                        tuple(v for i, v in enumerate(grid.m) if i != d) or (3,)) if grid.n > 1 else None
        lw = trapezoid_log_weights(other) if other is not None else np.zeros(1)
        for edge, inner in ((0, 1), (-1, -2)):
            face = np.take(L, edge, axis=d).reshape(-1, L.shape[-1])
            prev = np.take(L, inner, axis=d).reshape(-1, L.shape[-1])
            beta = (prev - face) / h
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(beta > 0, face - np.log(np.where(beta > 0, beta, 1.0)), -np.inf)
            out.append(logsumexp(term + lw[:, None], axis=0))
    return np.array(out)  # (2n, n_integrands)


def log_integrals(grid: BoxGrid, logf: np.ndarray, tails: bool = True) -> np.ndarray:
    """ln of trapezoid integrals (plus tail corrections) of exp(logf[:, i]) over R^n."""
    lw = trapezoid_log_weights(grid)
    body = logsumexp(logf + lw[:, None], axis=0)
    if not tails:
        return body
    return logsumexp(np.vstack([body[None], _tail_terms(grid, logf)]), axis=0)


@dataclass
class SectionBasis:
    """Monomial basis at level k with log squared norms."""

    k: int
    alphas: np.ndarray
    log_norms: np.ndarray
    axis: int
    polytope: Polytope
    meta: dict = field(default_factory=dict)

    @property
    def norms_sq(self) -> np.ndarray:
        return np.exp(self.log_norms)

    @property
    def orders(self) -> np.ndarray:
        """Vanishing order along the divisor, nu_alpha = alpha_axis."""
        return self.alphas[:, self.axis]

    def __len__(self) -> int:
        return len(self.alphas)

    def subbasis(self, lam) -> np.ndarray:
        """Mask of alpha with alpha_axis >= k * lam (exact rational comparison)."""
        return self.orders >= filtration_threshold(self.k, lam)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"alpha_{i + 1}" for i in range(self.alphas.shape[1])] + ["norm_sq"])
        for a, ln in zip(self.alphas, self.log_norms):
            w.writerow([int(c) for c in a] + [repr(float(np.exp(ln)))])
        return buf.getvalue()


def filtration_threshold(k: int, lam) -> int:
    """Smallest integer >= k * lam, computed exactly."""
    return math.ceil(k * as_fraction(lam))


def is_jumping_level(k: int, lam) -> bool:
    """True when k * lam is an integer (the multiplier ideal jumps exactly there)."""
    return (k * as_fraction(lam)).denominator == 1


def quadrature_grid(phi: GridFn, refine: int) -> BoxGrid:
    return phi.grid.refine(refine) if refine > 1 else phi.grid


def _phi_on(grid: BoxGrid, phi: GridFn, metric: ReferenceMetric | None) -> np.ndarray:
    if grid == phi.grid:
        return phi.values.ravel()
    if metric is None:
        raise ValueError("a closed-form metric is needed to refine the quadrature grid")
    return metric(grid.points())


def monomial_norms(phi: GridFn, k: int, polytope: Polytope, axis: int = 0,
                   metric: ReferenceMetric | None = None, refine: int = 4,
                   log_density: Callable = logistic_log_density) -> SectionBasis:
    """Squared L2 norms of z^alpha, alpha in kP ∩ Z^n, by tensor trapezoid quadrature.

    With ``metric`` the integrand is evaluated on the function grid refined
    ``refine`` times; otherwise on the nodes of ``phi``.  Sums are log-sum-exp
    stabilised and exponential tails beyond the box are added per face.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    alphas = lattice_points(polytope, k)
    if len(alphas) > BASIS_CAP:
        raise ValueError(f"basis of {len(alphas)} sections exceeds the cap {BASIS_CAP}")
    qgrid = quadrature_grid(phi, refine if metric is not None else 1)
    X = qgrid.points()
    base = -k * _phi_on(qgrid, phi, metric) + log_density(X)
    logn = np.empty(len(alphas))
    chunk = max(1, 2**22 // max(1, len(X)))
    for s in range(0, len(alphas), chunk):
        a = alphas[s:s + chunk]
        logn[s:s + chunk] = log_integrals(qgrid, base[:, None] + _dot(a, X))
    meta = {"density": DENSITY_ID, "quadrature_grid": qgrid.to_dict(), "k": int(k)}
    return SectionBasis(int(k), alphas, logn, axis, polytope, meta)


def log_section_sum(basis: SectionBasis, phi_values: np.ndarray, X: np.ndarray, mask: np.ndarray | None = None,
                    extra: np.ndarray | None = None) -> np.ndarray:
    """ln sum_alpha exp(<alpha,x> - k phi(x) - ln||z^alpha||^2 + extra_alpha) at points X."""
    sel = np.ones(len(basis), bool) if mask is None else mask
    if not sel.any():
        return np.full(len(X), -np.inf)
    a = basis.alphas[sel]
    terms = _dot(a, X) - basis.log_norms[sel][None, :]
    if extra is not None:
        terms = terms + extra[sel][None, :]
    return logsumexp(terms, axis=1) - basis.k * phi_values


def log_bergman(basis: SectionBasis, phi: GridFn, lam) -> np.ndarray:
    """ln B_k(phi, lam psi) on phi's grid (-inf everywhere for an empty subbasis)."""
    mask = basis.subbasis(lam)
    return log_section_sum(basis, phi.values.ravel(), phi.grid.points(), mask).reshape(phi.grid.shape)


def partial_bergman(basis: SectionBasis, phi: GridFn, lam) -> tuple[GridFn, bool]:
    """B_k(phi, lam psi) on phi's grid; returns (function, empty_flag).

    Use :func:`log_bergman` where B_k under- or overflows.
    """
    count = int(basis.subbasis(lam).sum())
    values = np.exp(log_bergman(basis, phi, lam))
    return GridFn(phi.grid, values, meta={"k": basis.k, "lambda": float(lam), "sections": count}), count == 0


def section_exhaustion(basis: SectionBasis, phi: GridFn) -> GridFn:
    """sum alpha_j |s_alpha|^2 / (k sum |s_alpha|^2), nodewise."""
    X = phi.grid.points()
    f = phi.values.ravel()
    den = log_section_sum(basis, f, X)
    pos = basis.orders > 0
    num = log_section_sum(basis, f, X, pos, extra=np.log(np.where(pos, basis.orders, 1)))
    return GridFn(phi.grid, (np.exp(num - den) / basis.k).reshape(phi.grid.shape))


def phong_sturm_metric(basis: SectionBasis, phi: GridFn, t: float) -> GridFn:
    """(1/k) ln sum_alpha exp(t alpha_j + <alpha, x>) / ||z^alpha||^2 on phi's grid."""
    if t < 0:
        raise ValueError("t must be >= 0")
    X = phi.grid.points()
    zero = np.zeros(len(X))
    logs = log_section_sum(basis, zero, X, extra=t * basis.orders.astype(float))
    return GridFn(phi.grid, (logs / basis.k).reshape(phi.grid.shape), convex=True)


# ---------------------------------------------------------------------------
# convergence studies


def _fit_rate(ks: np.ndarray, dev: np.ndarray) -> tuple[float, float]:
    A = np.column_stack([1.0 / ks, np.log(ks) / ks])
    coef, *_ = np.linalg.lstsq(A, dev, rcond=None)
    return float(coef[0]), float(coef[1])


def bergman_log_convergence(phi: GridFn, envelope: GridFn, polytope: Polytope, lam, axis: int,
                            ks: Sequence[int], region: np.ndarray, metric: ReferenceMetric | None = None,
                            bases: dict | None = None) -> dict:
    """sup over region of |k^-1 ln B_k - (envelope - phi)| for each k.

    Returns rows ``(k, deviation)``, the fitted (c0, c1) of
    c0/k + c1 ln(k)/k and whether the deviation decreases along ``ks``.
    """
    target = (envelope.values - phi.values)[region]
    rows = []
    for k in ks:
        basis = bases[k] if bases and k in bases else monomial_norms(phi, k, polytope, axis, metric)
        logb = log_bergman(basis, phi, lam)[region]
        rows.append((int(k), float(np.max(np.abs(logb / k - target)))))
    ks_a = np.array([r[0] for r in rows], float)
    dev = np.array([r[1] for r in rows])
    c0, c1 = _fit_rate(ks_a, dev) if len(rows) >= 2 else (float("nan"), float("nan"))
    return {"rows": rows, "fit": (c0, c1), "decreasing": bool(np.all(np.diff(dev) < 0))}


def cell_aggregation(coarse: BoxGrid, fine: BoxGrid) -> list[np.ndarray]:
    """Per-axis matrices summing trapezoid-weighted fine nodes into coarse dual cells.

    Fine nodes on a cell boundary are split evenly between the two cells.
    """
    mats = []
    for (c0, m, mf, hf) in zip(coarse.lo, coarse.m, fine.m, fine.spacing):
        r = (mf - 1) // (m - 1)
        w = np.full(mf, hf)
        w[0] = w[-1] = hf / 2
        A = np.zeros((m, mf))
        for i in range(mf):
            pos = i / r
            lo = math.floor(pos + 0.5 - 1e-12)
            if abs(pos - round(pos)) == 0.5 and r % 2 == 0:
                A[int(pos - 0.5), i] += w[i] / 2
                A[int(pos + 0.5), i] += w[i] / 2
            else:
                A[min(max(lo, 0), m - 1), i] += w[i]
        mats.append(A)
    return mats


def bergman_cell_masses(basis: SectionBasis, phi: GridFn, lam, metric: ReferenceMetric | None = None,
                        refine: int = 4) -> np.ndarray:
    """Integrals of k^-n B_k rho over the dual cells of phi's grid nodes."""
    n = phi.grid.n
    fine = quadrature_grid(phi, refine if metric is not None else 1)
    X = fine.points()
    logb = log_section_sum(basis, _phi_on(fine, phi, metric), X, basis.subbasis(lam))
    dens = np.exp(logb + logistic_log_density(X) - n * math.log(basis.k)).reshape(fine.shape)
    if fine == phi.grid:
        return dens * np.exp(trapezoid_log_weights(fine)).reshape(fine.shape)
    out = dens
    for d, A in enumerate(cell_aggregation(phi.grid, fine)):
        out = np.moveaxis(np.tensordot(A, np.moveaxis(out, d, 0), axes=(1, 0)), 0, d)
    return out


def parseval_check(basis: SectionBasis, phi: GridFn, lam) -> dict:
    """k^-n int B_k rho on phi's own grid (trapezoid plus tails) versus k^-n #subbasis."""
    grid = phi.grid
    X = grid.points()
    mask = basis.subbasis(lam)
    logb = log_section_sum(basis, phi.values.ravel(), X, mask) + logistic_log_density(X)
    total = float(np.exp(log_integrals(grid, logb[:, None])[0]))
    count = int(mask.sum())
    kn = basis.k ** grid.n
    return {"integral": total / kn, "count": count / kn,
            "relative_error": abs(total - count) / max(count, 1)}


def bergman_measure_convergence(phi: GridFn, polytope: Polytope, lam, axis: int, ks: Sequence[int],
                                phi_measure, contact_mask: np.ndarray, metric: ReferenceMetric | None = None,
                                bases: dict | None = None) -> dict:
    """L1 distance between cell integrals of k^-n B_k rho and MA(phi) on the contact set."""
    target = np.where(contact_mask, phi_measure.mass, 0.0)
    rows = []
    for k in ks:
        basis = bases[k] if bases and k in bases else monomial_norms(phi, k, polytope, axis, metric)
        cells = bergman_cell_masses(basis, phi, lam, metric)
        rows.append((int(k), float(np.sum(np.abs(cells - target)))))
    dist = np.array([r[1] for r in rows])
    return {"rows": rows, "decreasing": bool(np.all(np.diff(dist) < 0))}


def h0_growth(polytope: Polytope, axis: int, lam, ks: Sequence[int]) -> dict:
    """Normalized filtration counts k^-n #{alpha in kP : alpha_axis >= k lam} against the slice volume."""
    vol = slice_volume(polytope, SliceConstraint(axis, float(lam)))
    rows = []
    for k in ks:
        pts = lattice_points(polytope, k)
        count = int(np.sum(pts[:, axis] >= filtration_threshold(k, lam)))
        rows.append({"k": int(k), "count": count, "normalized": count / k ** polytope.n,
                     "jumping": is_jumping_level(k, lam)})
    return {"rows": rows, "slice_volume": vol}


def tame_upper_bound_check(basis: SectionBasis, phi: GridFn, lam, envelope: GridFn, region: np.ndarray) -> dict:
    """Smallest C with B_k <= C k^n exp(k (envelope - phi)) on the region, and the lower constant.

    ``lower`` is min over the region of B_k exp(k (phi - envelope)).
    """
    logb = log_bergman(basis, phi, lam)
    r = (logb + basis.k * (phi.values - envelope.values))[region]
    n = phi.grid.n
    return {"k": basis.k, "min_valid_C": float(np.exp(r.max() - n * math.log(basis.k))),
            "lower": float(np.exp(r.min()))}
