"""Maximal envelopes with divisorial singularities and the objects built from them.

For a convex potential phi whose gradient range is the polytope P, the
envelope with singularity lam * x_j (the divisor sits at x_j -> -inf) is

    phi_lam(x) = sup{<a, x> - phi*(a) : a in P, a_j >= lam},

the Legendre biconjugate with dual domain K = P ∩ {a_j >= lam}.  Here it is
computed in primal form as the convex envelope of the infimal convolution
of the sampled phi with the support function of K; this equals the
biconjugate of the sampled data with a continuous dual variable, so no dual
grid is involved.  A node x_i is in the contact set exactly when its
discrete subdifferential meets K, which for subgradients inside P is the
condition max{a_j : a in S_i} >= lam.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from . import _kernels as K
from .convex import (LowerHull, biconjugate, contact_tolerance, convexify, legendre_transform,
                     lower_hull, ma_measure, require_convex, CellMeasure)
from .grid import BoxGrid, GridFn
from .polytope import Polytope, SliceConstraint, as_fraction

logger = logging.getLogger(__name__)

DEFAULT_DELTA_LAMBDA = 1.0 / 256


def lambda_grid(lo, hi, delta: float = DEFAULT_DELTA_LAMBDA) -> np.ndarray:
    """lo, lo + delta, ..., ending exactly at hi."""
    lo, hi = float(lo), float(hi)
    steps = int(np.ceil((hi - lo) / delta - 1e-9))
    grid = lo + delta * np.arange(steps + 1)
    grid[-1] = hi
    return grid


def slice_vertices(poly: Polytope, axis: int, lam) -> np.ndarray | None:
    """Vertices of P ∩ {a_axis >= lam} as floats, or None when the slice is not full-dimensional."""
    piece = poly.clip(axis, lam)
    return None if piece is None else piece.vertex_array


def constrained_envelope(fn: GridFn, dual_vertices: np.ndarray, known_contact: np.ndarray | None = None,
                         convex_pass: bool = True) -> GridFn:
    """Biconjugate of sampled ``fn`` with dual variable restricted to conv(dual_vertices).

    Computed as the convex envelope of min_y f(y) + h_K(x - y).  Nodes in
    ``known_contact`` are certified (their subdifferential meets K) and keep
    the value f.
    """
    X = fn.grid.points()
    f = fn.values.ravel()
    V = np.ascontiguousarray(np.asarray(dual_vertices, float).reshape(-1, fn.grid.n))
    out = f.copy()
    todo = np.isfinite(f)
    if known_contact is not None:
        todo &= ~known_contact.ravel()
    targets = np.flatnonzero(todo).astype(np.int64)
    if targets.size:
        out[targets] = np.minimum(K.infconv_support(X, f, V, targets), f[targets])
    env = GridFn(fn.grid, out.reshape(fn.grid.shape), tail_model=None, convex=False)
    if convex_pass:
        env = convexify(env)
    env.values = np.minimum(env.values, fn.values)
    return env


@dataclass
class EnvelopeResult:
    """Envelope with its contact set {phi - envelope <= contact_tolerance}."""

    envelope: GridFn
    lam: float
    axis: int
    contact_mask: np.ndarray
    contact_tolerance: float
    polytope: Polytope
    meta: dict = field(default_factory=dict)


def max_envelope(phi: GridFn, lam: float, axis: int, polytope: Polytope, method: str = "primal",
                 hull: LowerHull | None = None, dual_points=None) -> EnvelopeResult:
    """Maximal convex minorant of ``phi`` with gradients in P ∩ {a_axis >= lam}.

    Parameters
    ----------
    method : {"primal", "dual"}
        "primal" (default) uses the infimal convolution route; "dual" takes
        the grid Legendre transform over the sliced domain and its
        biconjugate, which quantizes gradients to the dual grid.
    hull : precomputed :func:`lower_hull` of ``phi`` (reused across lambda sweeps).
    """
    polytope._check_axis(axis)
    if phi.grid.n != polytope.n:
        raise ValueError("dimension mismatch")
    require_convex(phi)
    lo, hi = polytope.coordinate_range(axis)
    q = as_fraction(lam)
    tol = contact_tolerance(phi)
    meta = {"method": method, "lambda": float(lam), "axis": axis}
    if q <= lo:
        return EnvelopeResult(phi.with_values(phi.values.copy(), convex=True), float(lam), axis,
                              np.isfinite(phi.values), tol, polytope, meta)
    if q >= hi:
        sentinel = phi.with_values(np.full(phi.grid.shape, -np.inf), convex=True)
        return EnvelopeResult(sentinel, float(lam), axis, np.zeros(phi.grid.shape, bool), tol, polytope, meta)
    if method == "primal":
        hull = lower_hull(phi) if hull is None else hull
        certified = hull.gmax[:, axis] >= float(lam)
        env = constrained_envelope(phi, slice_vertices(polytope, axis, q), known_contact=certified)
    elif method == "dual":
        fstar = legendre_transform(phi, polytope, SliceConstraint(axis, float(lam)), dual_points=dual_points)
        env = biconjugate(fstar, phi.grid)
        env.values = np.minimum(env.values, phi.values)
    else:
        raise ValueError(f"unknown method {method!r}")
    env.tail_model = polytope.clip(axis, q)
    env.meta = dict(phi.meta, envelope=meta)
    mask = phi.values - env.values <= tol
    return EnvelopeResult(env, float(lam), axis, mask, tol, polytope, meta)


# ---------------------------------------------------------------------------
# equality of measures


@dataclass
class EquilibriumReport:
    mass_on_contact: float
    mass_off_contact: float
    matched_mass_error: float
    phi_mass_on_contact: float
    total_phi_mass: float
    lam: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def _full_structure(n: int) -> np.ndarray:
    return np.ones((3,) * n, bool)


def equilibrium_check(phi: GridFn, result: EnvelopeResult, phi_measure: CellMeasure | None = None,
                      env_measure: CellMeasure | None = None) -> EquilibriumReport:
    """Compare the equilibrium measure MA(envelope) on the contact set with MA(phi) there.

    mass_off_contact : MA(envelope) outside the contact set dilated by one cell
    matched_mass_error : sum of |MA(envelope) - MA(phi)| over nodes whose
        whole 3^n neighbourhood is in the contact set
    mass_on_contact : MA(envelope) on the dilated contact set, i.e. the
        total mass of the equilibrium measure
    """
    mu_phi = ma_measure(phi) if phi_measure is None else phi_measure
    mu_env = ma_measure(result.envelope) if env_measure is None else env_measure
    mask = result.contact_mask
    st = _full_structure(phi.grid.n)
    dil = binary_dilation(mask, st)
    inner = binary_erosion(mask, st, border_value=1)
    me = mu_env.mass
    return EquilibriumReport(
        mass_on_contact=float(np.sum(me[dil])),
        mass_off_contact=float(np.sum(me[~dil])),
        matched_mass_error=float(np.sum(np.abs(me - mu_phi.mass)[inner])),
        phi_mass_on_contact=float(np.sum(mu_phi.mass[mask])),
        total_phi_mass=mu_phi.total,
        lam=result.lam,
    )


# ---------------------------------------------------------------------------
# exhaustion function


@dataclass
class ExhaustionFn:
    """H(x) = sup{lam : x in contact set of the lam-envelope} on a lambda grid.

    ``lower`` is sup{lam : the whole subdifferential of x lies in a_j >= lam};
    [lower, values] brackets the j-th subgradients of the node, and its
    midpoint is the cell value used for pushforwards.  Undefined nodes are NaN.
    """

    grid: BoxGrid
    values: np.ndarray
    lower: np.ndarray
    delta_lambda: float
    axis: int
    lambda_range: tuple

    def cell_values(self) -> np.ndarray:
        return 0.5 * (self.values + self.lower)

    def as_gridfn(self) -> GridFn:
        return GridFn(self.grid, np.nan_to_num(self.values, nan=-np.inf))


def _bisect_levels(levels: np.ndarray, accept) -> np.ndarray:
    """Largest index i with accept(i) per node, assuming accept is monotone.

    ``accept(idx)`` maps an index array (one per node) to a boolean array;
    index 0 is accepted and the last index rejected by convention.
    """
    lo = np.zeros(accept.size, np.int64)
    hi = np.full(accept.size, len(levels) - 1, np.int64)
    while True:
        active = hi - lo > 1
        if not active.any():
            return lo
        mid = (lo + hi) // 2
        ok = accept(mid)
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)


class _Predicate:
    def __init__(self, values: np.ndarray, levels: np.ndarray, tol: float):
        self.values, self.levels, self.tol = values, levels, tol
        self.size = values.size

    def __call__(self, idx: np.ndarray) -> np.ndarray:
        return self.values >= self.levels[idx] - self.tol


def exhaustion(phi: GridFn, axis: int, polytope: Polytope, delta_lambda: float = DEFAULT_DELTA_LAMBDA,
               hull: LowerHull | None = None) -> ExhaustionFn:
    """Exhaustion function by bisection over the lambda grid.

    The contact predicate for level lam at node x_i is that the discrete
    subdifferential S_i of phi meets {a_j >= lam}; this is exactly membership
    of x_i in the contact set of ``max_envelope(phi, lam)``.  The result is
    the largest grid level passing the predicate, so it lies within
    ``delta_lambda`` below the true supremum.
    """
    polytope._check_axis(axis)
    require_convex(phi)
    lo, hi = polytope.coordinate_range(axis)
    levels = lambda_grid(lo, hi, delta_lambda)
    hull = lower_hull(phi) if hull is None else hull
    gmax = hull.gmax[:, axis]
    gmin = hull.gmin[:, axis]
    tol = 1e-12
    H = levels[_bisect_levels(levels, _Predicate(gmax, levels, tol))]
    L = levels[_bisect_levels(levels, _Predicate(gmin, levels, tol))]
    undefined = ~np.isfinite(gmax) | ~np.isfinite(phi.values.ravel())
    H = np.where(undefined, np.nan, H)
    L = np.where(undefined, np.nan, np.minimum(L, H))
    return ExhaustionFn(phi.grid, H.reshape(phi.grid.shape), L.reshape(phi.grid.shape),
                        float(delta_lambda), axis, (float(lo), float(hi)))


# ---------------------------------------------------------------------------
# test curves and geodesic rays


@dataclass(frozen=True)
class TestCurve:
    """Divisorial family psi_lam = lam * x_axis for lam in [0, c] on a grid of step delta_lambda."""

    axis: int
    c: float
    delta_lambda: float = DEFAULT_DELTA_LAMBDA

    __test__ = False  # not a pytest class

    @property
    def lambdas(self) -> np.ndarray:
        return lambda_grid(0.0, self.c, self.delta_lambda)

    def check(self, polytope: Polytope) -> None:
        polytope._check_axis(self.axis)
        lo, hi = polytope.coordinate_range(self.axis)
        if lo != 0:
            raise ValueError("test curves assume lambda_min = 0 on the chosen axis")
        if not 0 < self.c <= float(hi):
            raise ValueError(f"c must lie in (0, {float(hi)}]")


@dataclass
class GeodesicRay:
    """phi_hat_t(x) sampled on a space grid times the time nodes ``t`` (values shape (m_t,) + grid.shape)."""

    grid: BoxGrid
    t: np.ndarray
    values: np.ndarray
    base: GridFn
    curve: TestCurve | None = None

    def at(self, k: int) -> GridFn:
        return GridFn(self.grid, self.values[k], convex=True)

    def space_time(self) -> GridFn:
        """The ray as one function on the (x, t) box grid, t as the last axis."""
        st = BoxGrid(self.grid.lo + (float(self.t[0]),), self.grid.hi + (float(self.t[-1]),),
                     self.grid.m + (len(self.t),), budget=2**26)
        return GridFn(st, np.moveaxis(self.values, 0, -1))


def legendre_ray(phi: GridFn, curve: TestCurve, T: float, m_t: int, polytope: Polytope,
                 convex_pass: bool = True) -> GeodesicRay:
    """phi_hat_t = max over the lambda grid of (phi_lam + lam t), then convexified in (x, t)."""
    curve.check(polytope)
    if m_t < 3 and T > 0:
        raise ValueError("need at least 3 time nodes")
    t = np.linspace(0.0, T, m_t)
    hull = lower_hull(phi)
    best = np.full((m_t,) + phi.grid.shape, -np.inf)
    for lam in curve.lambdas:
        env = max_envelope(phi, lam, curve.axis, polytope, hull=hull).envelope.values
        if np.isneginf(env).all():
            continue
        cand = env[None] + lam * t.reshape((-1,) + (1,) * phi.grid.n)
        np.maximum(best, cand, out=best)
    ray = GeodesicRay(phi.grid, t, best, phi, curve)
    if convex_pass and T > 0:
        st = convexify(ray.space_time())
        ray.values = np.minimum(np.moveaxis(st.values, -1, 0), best)
    return ray


def hmae_residual(ray: GeodesicRay, region: np.ndarray | None = None, clamp: float = -1e-8) -> float:
    """max over interior (x, t) nodes of det of the central-difference (x, t) Hessian.

    Eigenvalues below ``clamp`` are raised to it before taking the product.
    ``region`` optionally restricts the x nodes.
    """
    u = ray.space_time()
    vals = u.values
    n1 = vals.ndim
    h = np.array(u.grid.spacing)
    inner = tuple(slice(1, -1) for _ in range(n1))
    Hs = np.empty(tuple(s - 2 for s in vals.shape) + (n1, n1))
    for a in range(n1):
        for b in range(a, n1):
            if a == b:
                sp = [slice(1, -1)] * n1
                sm = [slice(1, -1)] * n1
                sp[a], sm[a] = slice(2, None), slice(None, -2)
                d2 = (vals[tuple(sp)] - 2 * vals[inner] + vals[tuple(sm)]) / h[a] ** 2
            else:
                def view(da, db):
                    s = [slice(1, -1)] * n1
                    s[a] = slice(1 + da, vals.shape[a] - 1 + da)
                    s[b] = slice(1 + db, vals.shape[b] - 1 + db)
                    return vals[tuple(s)]
                d2 = (view(1, 1) - view(1, -1) - view(-1, 1) + view(-1, -1)) / (4 * h[a] * h[b])
            Hs[..., a, b] = d2
            Hs[..., b, a] = d2
    ok = np.isfinite(Hs).all(axis=(-1, -2))
    if region is not None:
        ok &= np.asarray(region, bool)[tuple(slice(1, -1) for _ in range(n1 - 1))][..., None]
    ev = np.linalg.eigvalsh(Hs[ok])
    det = np.prod(np.maximum(ev, clamp), axis=-1)
    return float(det.max()) if det.size else 0.0


@dataclass
class RightDerivative:
    values: GridFn
    coarse: GridFn
    monotone: bool
    max_violation: float


def right_derivative(ray: GeodesicRay, tol: float = 1e-9) -> RightDerivative:
    """One-sided t-derivative at t = 0 from the two smallest time steps.

    Returns the quotient at the smallest step and checks it does not exceed
    the quotient at twice the step (convexity in t).
    """
    if len(ray.t) < 3:
        raise ValueError("need at least 3 time nodes")
    u0, u1, u2 = ray.values[0], ray.values[1], ray.values[2]
    q1 = (u1 - u0) / (ray.t[1] - ray.t[0])
    q2 = (u2 - u0) / (ray.t[2] - ray.t[0])
    ok = np.isfinite(q1) & np.isfinite(q2)
    scale = tol * (1.0 + np.abs(u0[np.isfinite(u0)]).max()) / (ray.t[1] - ray.t[0])
    viol = float(np.max((q1 - q2)[ok], initial=0.0))
    return RightDerivative(GridFn(ray.grid, q1), GridFn(ray.grid, q2), viol <= scale, viol)


def convex_sup_lambda(t: np.ndarray, u: np.ndarray, lam_grid: np.ndarray, tol: float = 1e-9):
    """Largest lam on the grid with min_t (u_t - lam t) >= u_0 - tol.

    ``t`` must start at 0; u is taken constant for t < 0.  Returns
    ``(lam, ok)`` where ``ok`` is False (and lam the grid minimum) when no
    grid value qualifies.
    """
    t = np.asarray(t, float)
    u = np.asarray(u, float)
    if t[0] != 0:
        raise ValueError("samples must start at t = 0")
    lam_grid = np.asarray(lam_grid, float)
    v = np.min(u[None, :] - lam_grid[:, None] * t[None, :], axis=1)
    good = v >= u[0] - tol * (1 + abs(u[0]))
    if not good.any():
        return float(lam_grid.min()), False
    return float(lam_grid[good].max()), True


# ---------------------------------------------------------------------------
# product and ray identities


def _interval_slice(lo: float, hi: float, mu: float) -> np.ndarray | None:
    """Vertices of [lo, hi] ∩ [mu, inf) as a (k, 1) array (k = 1 for a point)."""
    a = max(lo, mu)
    if a > hi:
        return None
    return np.array([[a], [hi]]) if a < hi else np.array([[hi]])


def _factor_envelope(fn: GridFn, lo: float, hi: float, mu: float) -> np.ndarray:
    V = _interval_slice(lo, hi, mu)
    if V is None:
        return np.full(fn.grid.shape, -np.inf)
    if mu <= lo:
        return fn.values
    return constrained_envelope(fn, V).values


def _joint_dual_vertices(r1: tuple, r2: tuple) -> np.ndarray:
    """Vertices of ([lo1,hi1] x [lo2,hi2]) ∩ {a + b >= 1}, degenerate intervals allowed."""
    (a0, a1), (b0, b1) = r1, r2
    corners = [(a, b) for a in (a0, a1) for b in (b0, b1)]
    pts = [c for c in corners if c[0] + c[1] >= 1]
    for p, q in [((a0, b0), (a1, b0)), ((a0, b1), (a1, b1)), ((a0, b0), (a0, b1)), ((a1, b0), (a1, b1))]:
        sp, sq = p[0] + p[1] - 1, q[0] + q[1] - 1
        if sp * sq < 0:
            s = sp / (sp - sq)
            pts.append((p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])))
    if not pts:
        raise ValueError("joint constraint is empty")
    return np.unique(np.array(pts, float), axis=0)


@dataclass
class ProductReport:
    sup_difference: float
    one_sided: float
    lhs: GridFn
    rhs: GridFn

    def to_dict(self) -> dict:
        return {"sup_difference": self.sup_difference, "one_sided": self.one_sided}


def product_envelope_check(phi1: GridFn, phi2: GridFn, lam_grid: np.ndarray,
                           range1: tuple = (0.0, 1.0), range2: tuple = (0.0, 1.0)) -> ProductReport:
    """Joint-constraint envelope on the product versus the lambda-sup of split envelopes.

    LHS: biconjugate of phi1(x) + phi2(y) with dual domain
    (Delta_1 x Delta_2) ∩ {a + b >= 1}.  RHS: max over ``lam_grid`` of
    (phi1)_lam(x) + (phi2)_{1-lam}(y).  ``one_sided`` is max(RHS - LHS).
    """
    if phi1.grid.n != 1 or phi2.grid.n != 1:
        raise ValueError("factors must be one-dimensional")
    r1 = tuple(float(v) for v in range1)
    r2 = tuple(float(v) for v in range2)
    grid = BoxGrid(phi1.grid.lo + phi2.grid.lo, phi1.grid.hi + phi2.grid.hi, phi1.grid.m + phi2.grid.m)
    base = GridFn(grid, phi1.values[:, None] + phi2.values[None, :])
    lhs = constrained_envelope(base, _joint_dual_vertices(r1, r2))
    rhs = np.full(grid.shape, -np.inf)
    for lam in np.asarray(lam_grid, float):
        e1 = _factor_envelope(phi1, *r1, lam)
        e2 = _factor_envelope(phi2, *r2, 1.0 - lam)
        np.maximum(rhs, e1[:, None] + e2[None, :], out=rhs)
    diff = lhs.values - rhs
    ok = np.isfinite(diff)
    return ProductReport(float(np.abs(diff[ok]).max()), float((-diff[ok]).max()), lhs, GridFn(grid, rhs))


@dataclass
class RayEnvelopeReport:
    sup_difference: float
    boundary_difference: float
    lhs: GridFn

    def to_dict(self) -> dict:
        return {"sup_difference": self.sup_difference, "boundary_difference": self.boundary_difference}


def ray_space_time_domain(polytope: Polytope, axis: int, c: float) -> Polytope:
    """Dual domain {(a, s) : a in P, 0 <= s <= c, a_axis >= s} in dimension n + 1."""
    n = polytope.n
    rows = [(tuple(nrm) + (Fraction(0),), off) for nrm, off in polytope.halfspaces]
    es = [Fraction(0)] * n
    rows.append((tuple(es) + (Fraction(-1),), Fraction(0)))
    rows.append((tuple(es) + (Fraction(1),), as_fraction(c)))
    link = [Fraction(0)] * n
    link[axis] = Fraction(-1)
    rows.append((tuple(link) + (Fraction(1),), Fraction(0)))
    return Polytope.from_halfspaces(rows)


def ray_as_envelope_check(phi: GridFn, curve: TestCurve, T: float, m_t: int, polytope: Polytope,
                          ray: GeodesicRay | None = None, region: np.ndarray | None = None) -> RayEnvelopeReport:
    """Envelope of phi(x) + c t on the (x, t) grid versus the Legendre ray.

    The singularity type sup_lam (lam x_j + lam t) corresponds to the dual
    domain {(a, s) : a in P, 0 <= s <= c, a_j >= s}.  The difference is
    taken over interior nodes (optionally restricted in x by ``region``);
    ``boundary_difference`` is the sup difference on the t = 0 slice.
    """
    ray = legendre_ray(phi, curve, T, m_t, polytope) if ray is None else ray
    st = ray.space_time()
    tt = st.grid.axes[-1]
    base = GridFn(st.grid, phi.values[..., None] + curve.c * tt.reshape((1,) * phi.grid.n + (-1,)))
    dom = ray_space_time_domain(polytope, curve.axis, curve.c)
    lhs = constrained_envelope(base, dom.vertex_array)
    diff = np.abs(lhs.values - st.values)
    inner = st.grid.interior_mask()
    if region is not None:
        inner &= np.asarray(region, bool)[..., None]
    boundary = diff[..., 0]
    if region is not None:
        boundary = boundary[np.asarray(region, bool)]
    return RayEnvelopeReport(float(diff[inner].max()), float(np.max(boundary)), lhs)
