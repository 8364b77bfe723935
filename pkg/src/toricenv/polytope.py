"""Rational convex polytopes: exact H/V representations, lattice points and slices.

Vertices and halfspaces are stored as :class:`fractions.Fraction` so that
membership tests (in particular the lattice filtration ``alpha_j >= k*lam``)
are exact.  Floating point is only used for volumes of 3-dimensional slices
and for evaluating support functions.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Rational = Fraction
RVec = tuple  # tuple of Fractions


def as_fraction(value) -> Fraction:
    """Convert ints, decimal floats, strings like ``"1/3"`` or Fractions exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"non-finite coordinate {value!r}")
        # decimal reading, so 0.1 means 1/10 rather than its binary expansion
        return Fraction(repr(float(value)))
    raise TypeError(f"cannot interpret {value!r} as a rational number")


def _primitive(normal: Sequence[Fraction], offset: Fraction):
    """Scale a halfspace <normal, a> <= offset to a primitive integer normal."""
    den = math.lcm(*[q.denominator for q in normal])
    ints = [int(q * den) for q in normal]
    g = math.gcd(*ints)
    if g == 0:
        raise ValueError("zero normal")
    return tuple(Fraction(v // g) for v in ints), offset * den / g


def _det(rows: list[list[Fraction]]) -> Fraction:
    """Exact determinant by fraction-valued Gaussian elimination."""
    a = [list(r) for r in rows]
    n = len(a)
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if a[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            fac = a[r][c] / a[c][c]
            if fac:
                for cc in range(c, n):
                    a[r][cc] -= fac * a[c][cc]
    return det


def _solve(a: list[list[Fraction]], b: list[Fraction]):
    """Exact solve of a square system; returns None when singular."""
    n = len(a)
    m = [list(a[i]) + [b[i]] for i in range(n)]
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] != 0), None)
        if piv is None:
            return None
        m[c], m[piv] = m[piv], m[c]
        for r in range(n):
            if r != c and m[r][c] != 0:
                fac = m[r][c] / m[c][c]
                for cc in range(c, n + 1):
                    m[r][cc] -= fac * m[c][cc]
    return tuple(m[i][n] / m[i][i] for i in range(n))


def _has_recession_direction(A: np.ndarray) -> bool:
    """True when some nonzero d satisfies A d <= 0 (the polyhedron is unbounded)."""
    from scipy.optimize import linprog

    n = A.shape[1]
    for i in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sign
            res = linprog(c, A_ub=A, b_ub=np.zeros(len(A)), bounds=[(-1, 1)] * n)
            if res.status == 0 and -res.fun > 1e-12:
                return True
    return False


def _hull_2d(points: Iterable[RVec]) -> list[RVec]:
    """Exact counter-clockwise convex hull (monotone chain), collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[RVec] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[RVec] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


class Polytope:
    """Bounded full-dimensional convex polytope with exact rational data.

    Parameters
    ----------
    vertices : sequence of points
        Any finite point set; the polytope is its convex hull and only the
        extreme points are kept.
    """

    def __init__(self, vertices: Iterable[Sequence]):
        pts = {tuple(as_fraction(c) for c in v) for v in vertices}
        if not pts:
            raise ValueError("polytope needs at least one vertex")
        dims = {len(p) for p in pts}
        if len(dims) != 1:
            raise ValueError("vertices of mixed dimension")
        n = dims.pop()
        if not 1 <= n <= 3:
            raise ValueError(f"dimension {n} not supported (1 to 3)")
        self.n = n
        self.vertices, self.halfspaces = self._build(sorted(pts))
        self._validate()

    # construction -------------------------------------------------------
    def _build(self, pts: list[RVec]):
        n = self.n
        if n == 1:
            lo, hi = pts[0][0], pts[-1][0]
            if lo == hi:
                raise ValueError("polytope is not full-dimensional")
            return ((lo,), (hi,)), (((Fraction(-1),), -lo), ((Fraction(1),), hi))
        if n == 2:
            hull = _hull_2d(pts)
            if len(hull) < 3:
                raise ValueError("polytope is not full-dimensional")
            hs = []
            for p, q in zip(hull, hull[1:] + hull[:1]):
                # ccw order: interior on the left, outward normal (dy, -dx)
                nrm = (q[1] - p[1], p[0] - q[0])
                hs.append(_primitive(nrm, nrm[0] * p[0] + nrm[1] * p[1]))
            return tuple(sorted(hull)), tuple(sorted(set(hs)))
        return self._build_3d(pts)

    def _build_3d(self, pts: list[RVec]):
        from scipy.spatial import ConvexHull, QhullError

        arr = np.array([[float(c) for c in p] for p in pts])
        try:
            hull = ConvexHull(arr)
        except QhullError as exc:
            raise ValueError("polytope is not full-dimensional") from exc
        centroid = [sum(p[i] for p in pts) / len(pts) for i in range(3)]
        hs = set()
        for simplex in hull.simplices:
            p, q, r = (pts[i] for i in simplex)
            u = [q[i] - p[i] for i in range(3)]
            w = [r[i] - p[i] for i in range(3)]
            nrm = [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]]
            off = sum(nrm[i] * p[i] for i in range(3))
            if sum(nrm[i] * centroid[i] for i in range(3)) > off:
                nrm, off = [-c for c in nrm], -off
            hs.add(_primitive(nrm, off))
        hs = sorted(hs)
        # a boundary point that is not extreme lies on at most two facets
        verts = [p for p in pts if sum(1 for a, b in hs if sum(x * y for x, y in zip(a, p)) == b) >= 3]
        return tuple(verts), tuple(hs)

    @classmethod
    def from_halfspaces(cls, halfspaces: Iterable[tuple[Sequence, object]]) -> "Polytope":
        """Build from inequalities ``<normal, a> <= offset`` by exact vertex enumeration."""
        hs = [(tuple(as_fraction(c) for c in nrm), as_fraction(off)) for nrm, off in halfspaces]
        if not hs:
            raise ValueError("no halfspaces given")
        n = len(hs[0][0])
        verts = set()
        for combo in itertools.combinations(hs, n):
            sol = _solve([list(c[0]) for c in combo], [c[1] for c in combo])
            if sol is None:
                continue
            if all(sum(x * y for x, y in zip(nrm, sol)) <= off for nrm, off in hs):
                verts.add(sol)
        if not verts:
            raise ValueError("halfspaces describe an empty set")
        A = np.array([[float(c) for c in nrm] for nrm, _ in hs])
        if _has_recession_direction(A):
            raise ValueError("halfspaces describe an unbounded set")
        poly = cls(verts)
        return poly

    @classmethod
    def interval(cls, lo=0, hi=1) -> "Polytope":
        return cls([(lo,), (hi,)])

    @classmethod
    def box(cls, bounds: Sequence[tuple]) -> "Polytope":
        """Product of intervals, e.g. ``box([(0, 1), (0, 1)])``."""
        return cls(itertools.product(*[(lo, hi) for lo, hi in bounds]))

    @classmethod
    def simplex(cls, n: int, scale=1) -> "Polytope":
        """Standard simplex conv{0, scale*e_1, ..., scale*e_n}."""
        verts = [tuple([0] * n)]
        for i in range(n):
            v = [0] * n
            v[i] = scale
            verts.append(tuple(v))
        return cls(verts)

    def _validate(self) -> None:
        for v in self.vertices:
            tight = 0
            for nrm, off in self.halfspaces:
                val = sum(a * b for a, b in zip(nrm, v))
                if val > off:
                    raise ValueError(f"vertex {v} violates a halfspace")
                tight += val == off
            if tight < self.n:
                raise ValueError(f"vertex {v} lies on fewer than n facets")
        for nrm, off in self.halfspaces:
            tight = sum(1 for v in self.vertices if sum(a * b for a, b in zip(nrm, v)) == off)
            if tight < self.n:
                raise ValueError("halfspace does not support a facet")
        if self.volume_exact <= 0:
            raise ValueError("polytope is not full-dimensional")

    # queries --------------------------------------------------------------
    @cached_property
    def vertex_array(self) -> np.ndarray:
        return np.array([[float(c) for c in v] for v in self.vertices])

    @cached_property
    def volume_exact(self) -> Fraction:
        if self.n == 1:
            return self.vertices[1][0] - self.vertices[0][0]
        if self.n == 2:
            ring = _hull_2d(self.vertices)
            s = sum(p[0] * q[1] - q[0] * p[1] for p, q in zip(ring, ring[1:] + ring[:1]))
            return abs(s) / 2
        from scipy.spatial import ConvexHull

        hull = ConvexHull(self.vertex_array)
        c = [sum(v[i] for v in self.vertices) / len(self.vertices) for i in range(3)]
        vol = Fraction(0)
        for simplex in hull.simplices:
            rows = [[self.vertices[i][d] - c[d] for d in range(3)] for i in simplex]
            vol += abs(_det(rows))
        return vol / 6

    @property
    def volume(self) -> float:
        return float(self.volume_exact)

    def coordinate_range(self, axis: int) -> tuple[Fraction, Fraction]:
        """Extreme values of the ``axis`` coordinate over the polytope."""
        self._check_axis(axis)
        vals = [v[axis] for v in self.vertices]
        return min(vals), max(vals)

    def bounding_box(self) -> list[tuple[Fraction, Fraction]]:
        return [self.coordinate_range(i) for i in range(self.n)]

    def max_linear(self, direction: Sequence) -> Fraction:
        d = [as_fraction(c) for c in direction]
        return max(sum(a * b for a, b in zip(d, v)) for v in self.vertices)

    def contains(self, point: Sequence) -> bool:
        p = [as_fraction(c) for c in point]
        return all(sum(a * b for a, b in zip(nrm, p)) <= off for nrm, off in self.halfspaces)

    def integer_halfspaces(self, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Integer arrays (A, b) with ``alpha/k in P  <=>  A @ alpha <= b``."""
        den = math.lcm(*[off.denominator for _, off in self.halfspaces])
        A = np.array([[int(c) * den for c in nrm] for nrm, _ in self.halfspaces], dtype=np.int64)
        b = np.array([int(off * den * k) for _, off in self.halfspaces], dtype=np.int64)
        return A, b

    def scaled(self, k) -> "Polytope":
        k = as_fraction(k)
        return Polytope([tuple(k * c for c in v) for v in self.vertices])

    def clip(self, axis: int, lam) -> "Polytope | None":
        """Exact slice ``P ∩ {a_axis >= lam}``; None when it is not full-dimensional."""
        self._check_axis(axis)
        lam = as_fraction(lam)
        lo, hi = self.coordinate_range(axis)
        if lam <= lo:
            return self
        if lam >= hi:
            return None
        pts = [v for v in self.vertices if v[axis] >= lam]
        for p, q in itertools.combinations(self.vertices, 2):
            if (p[axis] - lam) * (q[axis] - lam) < 0:
                t = (lam - p[axis]) / (q[axis] - p[axis])
                pts.append(tuple(p[i] + t * (q[i] - p[i]) for i in range(self.n)))
        return Polytope(pts)

    def _check_axis(self, axis: int) -> None:
        if not (isinstance(axis, (int, np.integer)) and 0 <= axis < self.n):
            raise ValueError(f"invalid axis {axis!r} for dimension {self.n}")

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        def enc(q: Fraction):
            return int(q) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"

        return {"n": self.n, "vertices": [[enc(c) for c in v] for v in self.vertices]}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        if "vertices" not in data:
            raise ValueError("polytope literal needs a 'vertices' list")
        poly = cls(data["vertices"])
        if "n" in data and int(data["n"]) != poly.n:
            raise ValueError(f"declared n={data['n']} but vertices have dimension {poly.n}")
        return poly

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __eq__(self, other) -> bool:
        return isinstance(other, Polytope) and self.vertices == other.vertices

    def __hash__(self) -> int:
        return hash(self.vertices)

    def __repr__(self) -> str:
        return f"Polytope(n={self.n}, vertices={self.to_dict()['vertices']})"


@dataclass(frozen=True)
class SliceConstraint:
    """The halfspace ``a_axis >= threshold`` inside a polytope."""

    axis: int
    threshold: float
    sense: str = ">="

    def __post_init__(self):
        if self.sense != ">=":
            raise ValueError("only the '>=' sense is supported")

    def check(self, poly: Polytope) -> None:
        poly._check_axis(self.axis)
        lo, hi = poly.coordinate_range(self.axis)
        if not lo <= as_fraction(self.threshold) <= hi:
            raise ValueError(f"threshold {self.threshold} outside [{lo}, {hi}]")


def lattice_points(poly: Polytope, k: int) -> np.ndarray:
    """Integer points of the dilation ``k*P`` in lexicographic order.

    Returns an int64 array of shape ``(count, n)``.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k <= 0:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    k = int(k)
    axes = []
    for lo, hi in poly.bounding_box():
        axes.append(np.arange(math.ceil(lo * k), math.floor(hi * k) + 1, dtype=np.int64))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, poly.n)
    A, b = poly.integer_halfspaces(k)
    inside = np.all(grid @ A.T <= b, axis=1)
    return grid[inside]


def support_function(poly: Polytope, x) -> np.ndarray | float:
    """h_P(x) = max over vertices v of <v, x>; ``x`` has trailing dimension n."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1 or (poly.n == 1 and x.ndim == 0)
    xx = np.atleast_1d(x).reshape(-1, poly.n)
    V = poly.vertex_array
    out = np.full(len(xx), -np.inf)
    for v in V:
        val = np.zeros(len(xx))
        for d in range(poly.n):
            val = val + v[d] * xx[:, d]
        out = np.maximum(out, val)
    if scalar:
        return float(out[0])
    return out.reshape(x.shape[:-1])


def slice_volume(poly: Polytope, constraint: SliceConstraint, samples: int = 2**20,
                 seed: int = 0) -> float:
    """Volume of ``P ∩ {a_j >= lam}``.

    Exact for n <= 2.  For n = 3 a scrambled Sobol estimate is returned; use
    :func:`slice_volume_qmc` to also get the standard error.  Thresholds
    outside the coordinate range are clamped (with a log message).
    """
    poly._check_axis(constraint.axis)
    lo, hi = poly.coordinate_range(constraint.axis)
    lam = as_fraction(constraint.threshold)
    if lam <= lo:
        if lam < lo:
            logger.info("threshold %s below coordinate range, clamped", constraint.threshold)
        return poly.volume
    if lam >= hi:
        if lam > hi:
            logger.info("threshold %s above coordinate range, clamped", constraint.threshold)
        return 0.0
    if poly.n <= 2:
        return float(poly.clip(constraint.axis, lam).volume_exact)
    return slice_volume_qmc(poly, constraint, samples=samples, seed=seed)[0]


def slice_volume_qmc(poly: Polytope, constraint: SliceConstraint, samples: int = 2**20,
                     seed: int = 0, replicas: int = 16) -> tuple[float, float]:
    """Randomized quasi-Monte-Carlo slice volume with its standard error.

    ``samples`` points are split over ``replicas`` independent scramblings of
    a Sobol sequence; the spread of the replica means gives the error bar.
    """
    from scipy.stats import qmc

    box = poly.bounding_box()
    lo = np.array([float(a) for a, _ in box])
    hi = np.array([float(b) for _, b in box])
    A = np.array([[float(c) for c in nrm] for nrm, _ in poly.halfspaces])
    b = np.array([float(off) for _, off in poly.halfspaces])
    per = max(1, samples // replicas)
    m = int(math.ceil(math.log2(per)))
    rng = np.random.default_rng(seed)
    est = []
    for _ in range(replicas):
        sob = qmc.Sobol(d=poly.n, scramble=True, seed=rng)
        u = lo + (hi - lo) * sob.random_base2(m)
        inside = np.all(u @ A.T <= b + 1e-15, axis=1) & (u[:, constraint.axis] >= float(constraint.threshold))
        est.append(inside.mean() * np.prod(hi - lo))
    est = np.array(est)
    return float(est.mean()), float(est.std(ddof=1) / math.sqrt(replicas))
