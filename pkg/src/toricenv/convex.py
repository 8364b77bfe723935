"""Discrete convex analysis on box grids.

Legendre-Fenchel transforms (direct and separable linear-time), biconjugates,
lower convex hulls of sampled graphs, discrete subdifferentials and the
Monge-Ampere measure they induce.

The Monge-Ampere mass of a node is the area (length in 1-D) of its
subdifferential with respect to the lower convex hull of the sampled graph,
i.e. the polygon spanned by the gradients of the hull facets around it.  The
subdifferential images of distinct nodes tile the gradient image, so total
mass equals the volume of that image exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _kernels as K
from .grid import BoxGrid, GridFn, _shifted, stencil_directions
from .polytope import Polytope, SliceConstraint, as_fraction

logger = logging.getLogger(__name__)


def contact_tolerance(f: GridFn) -> float:
    """Absolute tolerance used to decide equality of values on ``f``'s scale."""
    return 1e-10 * (1.0 + f.scale())


# ---------------------------------------------------------------------------
# lower convex hull of a sampled graph


@dataclass
class LowerHull:
    """Lower convex hull of the points ``(x_i, f_i)`` of a sampled function.

    Attributes
    ----------
    facets : (F, n+1) int array of node indices (flattened grid order)
    grads, icpt : facet planes ``z = <grads[f], x> + icpt[f]``
    vertex : bool mask of nodes that are hull vertices
    gmin, gmax : (N, n) coordinatewise range of the node subdifferentials
        (the gradients of all facet planes through the node); +/-inf when the
        node lies strictly above the hull.
    envelope : lower convex envelope evaluated at the nodes
    """

    grid: BoxGrid
    facets: np.ndarray
    grads: np.ndarray
    icpt: np.ndarray
    vertex: np.ndarray
    gmin: np.ndarray
    gmax: np.ndarray
    envelope: np.ndarray
    tol: float


def _facets_1d(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    order = np.flatnonzero(np.isfinite(f))
    hull: list[int] = []
    for i in order:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (f[b] - f[a]) * (x[i] - x[a]) >= (f[i] - f[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(int(i))
    return np.array([[a, b] for a, b in zip(hull[:-1], hull[1:])], dtype=np.int64).reshape(-1, 2)


def _facet_planes(P: np.ndarray, facets: np.ndarray):
    """Gradient and intercept of the affine interpolant on each simplex (Cramer's rule)."""
    n = P.shape[1] - 1
    V = P[facets]  # (F, n+1, n+1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _planes(V, n)


def _planes(V: np.ndarray, n: int):
    if n == 1:
        dx = V[:, 1, 0] - V[:, 0, 0]
        g = ((V[:, 1, 1] - V[:, 0, 1]) / dx)[:, None]
        c = V[:, 0, 1] - g[:, 0] * V[:, 0, 0]
        return g, c, np.abs(dx)
    E = V[:, 1:, :n] - V[:, :1, :n]  # (F, n, n) edge vectors
    dz = V[:, 1:, n] - V[:, :1, n]
    if n == 2:
        det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
        g0 = (dz[:, 0] * E[:, 1, 1] - dz[:, 1] * E[:, 0, 1]) / det
        g1 = (E[:, 0, 0] * dz[:, 1] - E[:, 1, 0] * dz[:, 0]) / det
        g = np.stack([g0, g1], axis=1)
    else:
        a, b, cc = E[:, 0], E[:, 1], E[:, 2]
        cof = np.stack([np.cross(b, cc), np.cross(cc, a), np.cross(a, b)], axis=1)  # rows: adjugate^T
        det = np.einsum("fi,fi->f", a, cof[:, 0])
        g = np.einsum("fki,fk->fi", cof, dz) / det[:, None]
    c = V[:, 0, n] - np.einsum("fi,fi->f", g, V[:, 0, :n])
    return g, c, np.abs(det)


def lower_hull(fn: GridFn, tol: float | None = None) -> LowerHull:
    """Lower convex hull of the graph of ``fn`` over its finite nodes."""
    grid = fn.grid
    X = grid.points()
    f = fn.values.ravel().copy()
    N, n = X.shape
    tol = contact_tolerance(fn) if tol is None else tol
    finite = np.isfinite(f)
    if not finite.any():
        raise ValueError("function is identically -inf")
    P = np.column_stack([X, f])
    if n == 1:
        facets = _facets_1d(X[:, 0], f)
    else:
        facets = _facets_nd(P, finite)
    if len(facets):
        grads, icpt, vol = _facet_planes(P, facets)
        span = np.prod([hi - lo for lo, hi in zip(grid.lo, grid.hi)])
        keep = vol > 1e-12 * span
        facets, grads, icpt = facets[keep], grads[keep], icpt[keep]
    if len(facets) == 0:
        # affine data: a single plane fitted by least squares
        A = np.column_stack([X[finite], np.ones(finite.sum())])
        coef, *_ = np.linalg.lstsq(A, f[finite], rcond=None)
        if np.abs(A @ coef - f[finite]).max() > tol:
            raise ValueError("could not build a lower hull")
        grads, icpt = coef[None, :n], coef[n:]
        facets = np.zeros((0, n + 1), np.int64)
    vertex = np.zeros(N, bool)
    vertex[np.unique(facets)] = True

    gmin = np.full((N, n), np.inf)
    gmax = np.full((N, n), -np.inf)
    env = np.where(vertex, f, -np.inf)
    # incident facets of vertex nodes
    for c in range(facets.shape[1]):
        idx = facets[:, c]
        np.minimum.at(gmin, idx, grads)
        np.maximum.at(gmax, idx, grads)
    # every other node: search all planes (flat regions leave many such nodes)
    rest = np.flatnonzero(~vertex & finite)
    if rest.size:
        lo, hi, best = K.touching_ranges(X, f, grads, icpt, rest.astype(np.int64), tol)
        gmin[rest], gmax[rest] = lo, hi
        env[rest] = np.minimum(best, f[rest])
    return LowerHull(grid, facets, grads, icpt, vertex, gmin, gmax, env, tol)


def _facets_nd(P: np.ndarray, finite: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(finite)
    pts = P[idx]
    n = P.shape[1] - 1
    z = pts[:, n]
    lid = np.append(pts[:, :n].mean(axis=0), z.max() + 1.0 + np.ptp(z))
    hull = None
    # near-flat tails can provoke dupridge errors in 4-d; exact merging
    # (Qx) and then wide merges (Q12) are the fallbacks, never joggling
    for opts in (None, "Qt Qx", "Qt Q12"):
        try:
            hull = ConvexHull(np.vstack([pts, lid]), qhull_options=opts)
            break
        except QhullError:
            continue
    if hull is None:
        return np.zeros((0, n + 1), np.int64)
    simp = hull.simplices
    keep = (simp < len(pts)).all(axis=1) & (hull.equations[:, n] < 0)
    return idx[simp[keep]].astype(np.int64)


def convexify(fn: GridFn) -> GridFn:
    """Largest convex function below the nodal data, evaluated at the nodes."""
    if fn.is_sentinel:
        return fn.with_values(fn.values, convex=True)
    hull = lower_hull(fn)
    vals = np.where(np.isfinite(fn.values.ravel()), hull.envelope, -np.inf)
    return fn.with_values(vals.reshape(fn.grid.shape), convex=True)


def require_convex(fn: GridFn, rtol: float = 1e-10) -> None:
    """Reject clearly non-convex input with a report of the worst midpoint defect."""
    fn.check_convex(rtol)


# ---------------------------------------------------------------------------
# Legendre transforms


@dataclass
class DualFn:
    """Legendre transform sampled on the nodes of a box grid over a dual domain.

    ``values`` is +inf at infeasible nodes; ``mask`` marks feasible ones.
    """

    domain: Polytope
    dual_grid: BoxGrid
    values: np.ndarray
    mask: np.ndarray
    constraint: SliceConstraint | None = None
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return self.dual_grid.points()[self.mask.ravel()]

    @property
    def feasible_values(self) -> np.ndarray:
        return self.values.ravel()[self.mask.ravel()]

    @property
    def empty(self) -> bool:
        return not self.mask.any()


def dual_grid_for(domain: Polytope, points: int | tuple | None = None) -> BoxGrid:
    """Box grid over the bounding box of ``domain`` (default 257 nodes/axis in 1-D, 65 in 2-D, 17 in 3-D)."""
    n = domain.n
    if points is None:
        points = {1: 257, 2: 65, 3: 17}[n]
    m = (points,) * n if np.isscalar(points) else tuple(points)
    box = domain.bounding_box()
    return BoxGrid(tuple(float(a) for a, _ in box), tuple(float(b) for _, b in box), m)


def feasible_mask(domain: Polytope, grid: BoxGrid, constraint: SliceConstraint | None = None) -> np.ndarray:
    """Exact membership of the nodes of a bounding-box grid of ``domain``.

    Node ``i`` along axis d sits at lo_d + i_d * step_d with rational lo/step,
    so membership reduces to integer inequalities.
    """
    box = domain.bounding_box()
    n = domain.n
    lo = [a for a, _ in box]
    step = [(b - a) / (m - 1) for (a, b), m in zip(box, grid.m)]
    if any(float(l) != gl for l, gl in zip(lo, grid.lo)):
        raise ValueError("grid is not the bounding-box grid of the domain")
    idx = np.stack(np.meshgrid(*[np.arange(m) for m in grid.m], indexing="ij"), axis=-1).reshape(-1, n)
    rows = [(nrm, off) for nrm, off in domain.halfspaces]
    if constraint is not None:
        e = [Fraction(0)] * n
        e[constraint.axis] = Fraction(-1)
        rows.append((tuple(e), -as_fraction(constraint.threshold)))
    ok = np.ones(len(idx), bool)
    for nrm, off in rows:
        # sum_d nrm_d (lo_d + i_d step_d) <= off  as integers
        coeff = [nrm[d] * step[d] for d in range(n)]
        rhs = off - sum(nrm[d] * lo[d] for d in range(n))
        den = math.lcm(*[q.denominator for q in coeff + [rhs]])
        ci = np.array([int(q * den) for q in coeff], dtype=np.int64)
        ok &= idx @ ci <= int(rhs * den)
    return ok.reshape(grid.shape)


def _tail_nodes(fn: GridFn) -> tuple[np.ndarray, np.ndarray]:
    """Extra points extending ``fn`` beyond the box by its tail model.

    Beyond a face node x_b the function is modelled as
    h(x) + (f - h)(x_b) with h the support function of the tail polytope.
    Along each outward axis ray this model is piecewise affine in the ray
    parameter; its breakpoints are the only places the Legendre supremum can
    be attained outside the box, so they are returned as extra nodes.
    """
    poly = fn.tail_model
    if poly is None:
        return np.zeros((0, fn.grid.n)), np.zeros(0)
    from .polytope import support_function

    V = poly.vertex_array
    X = fn.grid.points()
    f = fn.values.ravel()
    pts, vals = [], []
    for d in range(fn.grid.n):
        for side, bound in ((-1.0, fn.grid.lo[d]), (1.0, fn.grid.hi[d])):
            face = np.isclose(X[:, d], bound) & np.isfinite(f)
            xb, fb = X[face], f[face]
            nrm = np.zeros(fn.grid.n)
            nrm[d] = side
            hb = support_function(poly, xb)
            for a in range(len(V)):
                for b in range(a + 1, len(V)):
                    dv = V[a] - V[b]
                    den = dv @ nrm
                    if den == 0:
                        continue
                    s = -(xb @ dv) / den
                    sel = s > 0
                    if sel.any():
                        xc = xb[sel] + s[sel, None] * nrm
                        pts.append(xc)
                        vals.append(fb[sel] + support_function(poly, xc) - hb[sel])
    if not pts:
        return np.zeros((0, fn.grid.n)), np.zeros(0)
    return np.vstack(pts), np.concatenate(vals)


def legendre_transform(fn: GridFn, dual_domain: Polytope, constraint: SliceConstraint | None = None,
                       dual_points: int | tuple | None = None, method: str = "auto") -> DualFn:
    """Discrete Legendre transform restricted to a (possibly sliced) dual domain.

    phi*(a) = max over grid nodes (and tail-model points) x of <a, x> - f(x),
    evaluated at the feasible nodes of a bounding-box grid over
    ``dual_domain``.

    Parameters
    ----------
    method : {"auto", "direct", "separable"}
        "separable" applies the linear-time 1-D transform axis by axis on the
        full bounding box; it ignores tail points.  "auto" picks it when there
        is no slice constraint and the tail model adds no points.
    """
    if fn.grid.n != dual_domain.n:
        raise ValueError("dimension mismatch between function and dual domain")
    if constraint is not None:
        dual_domain._check_axis(constraint.axis)
    grid = dual_grid_for(dual_domain, dual_points)
    mask = feasible_mask(dual_domain, grid, constraint)
    if not mask.any():
        raise ValueError("dual domain is empty under the constraint")
    vals = np.full(grid.shape, np.inf)
    if fn.is_sentinel:
        return DualFn(dual_domain, grid, np.where(mask, -np.inf, np.inf), mask, constraint)
    tx, tf = _tail_nodes(fn)
    if method == "auto":
        method = "separable" if constraint is None and len(tx) == 0 else "direct"
    if method == "separable":
        full = separable_transform(fn, grid)
        vals[mask] = full[mask]
    elif method == "direct":
        X = fn.grid.points()
        f = fn.values.ravel()
        if len(tx):
            X = np.vstack([X, tx])
            f = np.concatenate([f, tf])
        A = grid.points()[mask.ravel()]
        vals[mask] = K.conjugate_direct(A, X, f)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DualFn(dual_domain, grid, vals, mask, constraint,
                  meta={"method": method, "source_grid": fn.grid.to_dict()})


def separable_transform(fn: GridFn, dual_grid: BoxGrid) -> np.ndarray:
    """max_x <a, x> - f(x) on a full product dual grid, one axis at a time.

    max_{x1..xn} = max_{x1} [a1 x1 + max_{x2..}(...)], each stage a batch of
    1-D linear-time transforms.
    """
    g = -fn.values  # work with u = -f, transform: max_x <a,x> + u(x)
    for d, (xs, ss) in enumerate(zip(fn.grid.axes, dual_grid.axes)):
        g = np.moveaxis(g, d, -1)
        flat = g.reshape(-1, g.shape[-1])
        out = np.empty((flat.shape[0], len(ss)))
        for r in range(flat.shape[0]):
            out[r] = K.llt_1d(xs, -flat[r], ss)
        g = np.moveaxis(out.reshape(g.shape[:-1] + (len(ss),)), -1, d)
    return g


def biconjugate(fstar: DualFn, grid: BoxGrid) -> GridFn:
    """f**(x) = max over feasible dual nodes a of <a, x> - f*(a), on ``grid``."""
    if fstar.empty or np.isneginf(fstar.feasible_values).all():
        return GridFn(grid, np.full(grid.shape, -np.inf), fstar.domain, convex=True)
    A = fstar.points
    fs = fstar.feasible_values
    vals = K.max_affine(grid.points(), A, -fs)
    return GridFn(grid, vals.reshape(grid.shape), tail_model=fstar.domain, convex=True)


def legendre_transform_1d_exact(x: np.ndarray, f: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Brute-force max_i s_j x_i - f_i (oracle for the fast paths)."""
    return np.max(s[:, None] * x[None, :] - f[None, :], axis=1)


# ---------------------------------------------------------------------------
# Monge-Ampere measure


@dataclass
class CellMeasure:
    """Nonnegative mass attached to each grid node (its dual cell)."""

    grid: BoxGrid
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, float).reshape(self.grid.shape)
        if (self.mass < 0).any():
            raise ValueError("negative mass")

    @property
    def total(self) -> float:
        return float(np.sum(self.mass.ravel()))

    def restrict(self, mask: np.ndarray) -> "CellMeasure":
        return CellMeasure(self.grid, np.where(mask, self.mass, 0.0))


def _polygon_areas(hull: LowerHull, nodes_mask: np.ndarray) -> np.ndarray:
    """Area of the polygon of facet gradients around each selected vertex (2-D)."""
    grid = hull.grid
    X = grid.points()
    F = hull.facets
    inc_node = F.ravel()
    inc_fac = np.repeat(np.arange(len(F)), 3)
    sel = nodes_mask[inc_node]
    inc_node, inc_fac = inc_node[sel], inc_fac[sel]
    cen = X[F].mean(axis=1)
    d = cen[inc_fac] - X[inc_node]
    ang = np.arctan2(d[:, 1], d[:, 0])
    order = np.lexsort((ang, inc_node))
    inc_node, inc_fac = inc_node[order], inc_fac[order]
    G = hull.grads[inc_fac]
    start = np.flatnonzero(np.r_[True, inc_node[1:] != inc_node[:-1]])
    # next gradient around the same node, wrapping at the end of each group
    nxt = np.arange(len(inc_node)) + 1
    ends = np.r_[start[1:], len(inc_node)]
    nxt[ends - 1] = start
    cross = G[:, 0] * G[nxt, 1] - G[nxt, 0] * G[:, 1]
    area = 0.5 * np.add.reduceat(cross, start)
    out = np.zeros(grid.size)
    out[inc_node[start]] = np.abs(area)
    return out


def ma_measure(fn: GridFn, hull: LowerHull | None = None, check: bool = True) -> CellMeasure:
    """Monge-Ampere measure: volume of each interior node's discrete subdifferential.

    Nodes on the box boundary carry no mass (their subdifferential is
    unbounded).  Total mass equals the volume of the gradient image of the
    interior nodes, which converges to vol(gradient range).
    """
    grid = fn.grid
    if grid.n > 2:
        raise NotImplementedError("Monge-Ampere measure is implemented for n <= 2")
    if fn.is_sentinel:
        return CellMeasure(grid, np.zeros(grid.shape))
    if check:
        require_convex(fn)
    hull = lower_hull(fn) if hull is None else hull
    interior = grid.interior_mask().ravel() & hull.vertex & np.isfinite(fn.values.ravel())
    if grid.n == 1:
        mass = np.where(interior, hull.gmax[:, 0] - hull.gmin[:, 0], 0.0)
    else:
        mass = _polygon_areas(hull, interior)
    return CellMeasure(grid, np.maximum(mass, 0.0).reshape(grid.shape))


# ---------------------------------------------------------------------------
# differences


def gradient(fn: GridFn) -> np.ndarray:
    """Central differences (one-sided on box faces); shape ``(n,) + grid.shape``."""
    g = np.gradient(fn.values, *fn.grid.axes, edge_order=1)
    return np.stack(g, axis=0) if fn.grid.n > 1 else g[None]


def second_difference_sup(fn: GridFn, region: np.ndarray | None = None) -> float:
    """max over region nodes and axis/diagonal steps e of (f(x+e) - 2f(x) + f(x-e)) / |e|^2."""
    grid = fn.grid
    region = grid.interior_mask() if region is None else np.asarray(region, bool)
    h = np.array(grid.spacing)
    best = -np.inf
    for d in stencil_directions(grid.n):
        fm, fc, fp = _shifted(fn.values, d)
        _, rc, _ = _shifted(region, d)
        step2 = float(np.sum((np.array(d) * h) ** 2))
        q = (fp - 2 * fc + fm) / step2
        ok = rc & np.isfinite(q)
        if ok.any():
            best = max(best, float(q[ok].max()))
    return best
