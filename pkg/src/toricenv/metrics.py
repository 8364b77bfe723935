"""Smooth reference potentials and their samples on grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .grid import BoxGrid, GridFn
from .polytope import Polytope

BUILTIN_POLYTOPES = {
    "p1": lambda: Polytope.interval(0, 1),
    "simplex": lambda: Polytope.simplex(2),
    "p1xp1": lambda: Polytope.box([(0, 1), (0, 1)]),
    "simplex3": lambda: Polytope.simplex(3),
    "cube3": lambda: Polytope.box([(0, 1)] * 3),
}


@dataclass
class ReferenceMetric:
    """Convex potential ``phi(x) = ln sum_v w_v exp(<v, x>)`` over the vertices of a polytope.

    Its gradient map is a diffeomorphism of R^n onto the interior of the
    polytope and ``phi - h_P`` is bounded.  ``kind="custom-grid"`` wraps an
    already sampled function instead; it can only be evaluated at its nodes.
    """

    polytope: Polytope
    kind: str = "vertex-softmax"
    weights: np.ndarray | None = None
    samples: GridFn | None = None
    name: str = "custom"
    _logw: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("vertex-softmax", "custom-grid"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        nv = len(self.polytope.vertices)
        if self.kind == "custom-grid":
            if self.samples is None:
                raise ValueError("custom-grid metric needs sampled values")
            self._logw = np.zeros(nv)
            return
        w = np.ones(nv) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (nv,) or np.any(w <= 0):
            raise ValueError("one positive weight per vertex is required")
        self.weights = w
        self._logw = np.log(w)

    @classmethod
    def builtin(cls, name: str) -> "ReferenceMetric":
        """Named built-ins: ``p1``, ``simplex``, ``p1xp1``, ``simplex3``, ``cube3``."""
        try:
            poly = BUILTIN_POLYTOPES[name]()
        except KeyError:
            raise ValueError(f"unknown built-in metric {name!r}; choose from {sorted(BUILTIN_POLYTOPES)}")
        return cls(poly, name=name)

    @property
    def n(self) -> int:
        return self.polytope.n

    def _exponents(self, x: np.ndarray) -> np.ndarray:
        V = self.polytope.vertex_array
        z = np.empty(x.shape[:-1] + (len(V),))
        for k, v in enumerate(V):
            acc = self._logw[k] + np.zeros(x.shape[:-1])
            for d in range(self.n):
                acc = acc + v[d] * x[..., d]
            z[..., k] = acc
        return z

    def _as_points(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return x

    def __call__(self, x) -> np.ndarray:
        if self.kind == "custom-grid":
            raise TypeError("custom-grid metrics are only defined at their grid nodes")
        x = self._as_points(x)
        return logsumexp(self._exponents(x), axis=-1)

    def gradient(self, x) -> np.ndarray:
        """Softmax average of the vertices, shape ``(..., n)``."""
        x = self._as_points(x)
        z = self._exponents(x)
        p = np.exp(z - logsumexp(z, axis=-1, keepdims=True))
        return p @ self.polytope.vertex_array

    def hessian(self, x) -> np.ndarray:
        x = self._as_points(x)
        z = self._exponents(x)
        p = np.exp(z - logsumexp(z, axis=-1, keepdims=True))
        V = self.polytope.vertex_array
        mean = p @ V
        second = np.einsum("...k,ki,kj->...ij", p, V, V)
        return second - mean[..., :, None] * mean[..., None, :]

    def sample(self, grid: BoxGrid) -> GridFn:
        """Values at the grid nodes, tagged convex with the polytope as tail model."""
        if grid.n != self.n:
            raise ValueError("grid and metric dimensions differ")
        if self.kind == "custom-grid":
            if self.samples.grid != grid:
                raise ValueError("custom-grid metric requested on a different grid")
            return self.samples
        vals = self(grid.points()).reshape(grid.shape)
        return GridFn(grid, vals, tail_model=self.polytope, convex=True,
                      meta={"metric": self.describe()})

    def describe(self) -> dict:
        out = {"kind": self.kind, "name": self.name, "polytope": self.polytope.to_dict()}
        if self.kind == "vertex-softmax":
            out["weights"] = [float(w) for w in self.weights]
        return out


def logistic_log_density(x: np.ndarray) -> np.ndarray:
    """ln of prod_i e^{x_i} / (1 + e^{x_i})^2, evaluated stably; ``x`` has shape (..., n)."""
    x = np.asarray(x, float)
    return np.sum(x - 2.0 * np.logaddexp(0.0, x), axis=-1)
