"""Uniform box grids and sampled functions on them."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .polytope import Polytope

DEFAULT_BUDGET = 2**22


@dataclass(frozen=True)
class BoxGrid:
    """Uniform rectangular grid ``prod_i linspace(lo_i, hi_i, m_i)``.

    Nodes are ordered lexicographically (C order of ``shape``).
    """

    lo: tuple
    hi: tuple
    m: tuple
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        m = tuple(int(v) for v in self.m)
        if not (len(lo) == len(hi) == len(m)) or not 1 <= len(m) <= 3:
            raise ValueError("grid needs 1 to 3 axes with matching lo/hi/m")
        for a, b, k in zip(lo, hi, m):
            if not a < b:
                raise ValueError(f"empty axis [{a}, {b}]")
            if k < 3:
                raise ValueError("each axis needs at least 3 points")
        if int(np.prod(m)) > self.budget:
            raise ValueError(f"grid has {int(np.prod(m))} nodes, budget is {self.budget}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "m", m)

    @classmethod
    def cube(cls, n: int, radius: float = 20.0, points: int | None = None) -> "BoxGrid":
        """Symmetric box [-radius, radius]^n with the default resolution for n."""
        if points is None:
            points = {1: 513, 2: 129, 3: 33}[n]
        return cls((-radius,) * n, (radius,) * n, (points,) * n)

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def shape(self) -> tuple:
        return self.m

    @property
    def size(self) -> int:
        return int(np.prod(self.m))

    @property
    def spacing(self) -> tuple:
        return tuple((b - a) / (k - 1) for a, b, k in zip(self.lo, self.hi, self.m))

    @property
    def h(self) -> float:
        """Largest spacing; the resolution parameter used in tolerances."""
        return max(self.spacing)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.m)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(size, n)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def refine(self, factor: int = 2) -> "BoxGrid":
        """Same box with spacing divided by ``factor``."""
        return BoxGrid(self.lo, self.hi, tuple((k - 1) * factor + 1 for k in self.m), self.budget)

    def coarsen(self, factor: int = 2) -> "BoxGrid":
        for k in self.m:
            if (k - 1) % factor:
                raise ValueError("grid cannot be coarsened by this factor")
        return BoxGrid(self.lo, self.hi, tuple((k - 1) // factor + 1 for k in self.m), self.budget)

    def region_mask(self, lo, hi) -> np.ndarray:
        """Boolean mask of nodes inside the closed box [lo, hi] (scalars broadcast)."""
        lo = np.broadcast_to(np.asarray(lo, float), (self.n,))
        hi = np.broadcast_to(np.asarray(hi, float), (self.n,))
        mask = np.ones(self.shape, bool)
        for d, g in enumerate(self.mesh()):
            tol = 1e-9 * self.spacing[d]
            mask &= (g >= lo[d] - tol) & (g <= hi[d] + tol)
        return mask

    def interior_mask(self, width: int = 1) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        mask[tuple(slice(width, k - width) for k in self.m)] = True
        return mask

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "m": list(self.m)}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxGrid":
        return cls(tuple(data["lo"]), tuple(data["hi"]), tuple(data["m"]))


@dataclass
class GridFn:
    """Function sampled on a :class:`BoxGrid`.

    ``values`` has shape ``grid.shape``; ``-inf`` is the sentinel for the
    identically singular function.  ``tail_model`` is a polytope whose
    support function describes the growth of the function beyond the box.
    """

    grid: BoxGrid
    values: np.ndarray
    tail_model: Polytope | None = None
    convex: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        if np.isnan(vals).any() or np.isposinf(vals).any():
            raise ValueError("values must be finite or -inf")
        self.values = vals
        if self.tail_model is not None and self.tail_model.n != self.grid.n:
            raise ValueError("tail model dimension does not match the grid")

    @property
    def is_sentinel(self) -> bool:
        return bool(np.isneginf(self.values).all())

    def scale(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(np.abs(finite).max()) if finite.size else 0.0

    def convexity_violation(self) -> float:
        """Largest negative midpoint second difference over axis and diagonal stencils."""
        return convexity_violation(self.values)

    def check_convex(self, rtol: float = 1e-10) -> None:
        """Raise ``ValueError`` when midpoint convexity fails beyond ``rtol * (1 + scale)``."""
        viol = self.convexity_violation()
        tol = rtol * (1.0 + self.scale())
        if viol > tol:
            raise ValueError(f"non-convex input: midpoint defect {viol:.3e} exceeds {tol:.3e}")

    def with_values(self, values: np.ndarray, **kw) -> "GridFn":
        return GridFn(self.grid, values, kw.pop("tail_model", self.tail_model),
                      kw.pop("convex", self.convex), kw.pop("meta", dict(self.meta)))

    # I/O ------------------------------------------------------------------
    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.grid.n)] + ["value"])
        pts = self.grid.points()
        for p, v in zip(pts, self.values.ravel()):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "tail_model": None if self.tail_model is None else self.tail_model.to_dict(),
            "convex": self.convex,
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``path`` (CSV, header ``x1,...,xn,value``) and ``path.json`` sidecar."""
        path = Path(path)
        path.write_text(self.csv_text())
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))
        return path, side

    @classmethod
    def load(cls, path: str | Path) -> "GridFn":
        path = Path(path)
        side = path.with_suffix(path.suffix + ".json")
        vals = []
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows)
            if header[-1] != "value":
                raise ValueError("CSV header must end with 'value'")
            for row in rows:
                vals.append(float(row[-1]))
        if side.exists():
            info = json.loads(side.read_text())
            grid = BoxGrid.from_dict(info["grid"])
            tail = Polytope.from_dict(info["tail_model"]) if info.get("tail_model") else None
            return cls(grid, np.array(vals), tail, bool(info.get("convex", False)), info.get("meta", {}))
        # no sidecar: recover the grid from the coordinates
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = data.shape[1] - 1
        axes = [np.unique(data[:, i]) for i in range(n)]
        grid = BoxGrid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(len(a) for a in axes))
        return cls(grid, data[:, -1])


def stencil_directions(n: int) -> list[tuple]:
    """Axis and diagonal directions with entries in {-1,0,1}, one per +/- pair."""
    dirs = []
    for d in np.ndindex(*(3,) * n):
        v = tuple(int(c) - 1 for c in d)
        if any(v) and v > tuple(-c for c in v):
            dirs.append(v)
    return dirs


def _shifted(values: np.ndarray, d: Sequence[int]):
    """Views (minus, centre, plus) of ``values`` along integer direction ``d``."""
    sl_m, sl_c, sl_p = [], [], []
    for c, size in zip(d, values.shape):
        if c == 0:
            sl_m.append(slice(None)); sl_c.append(slice(None)); sl_p.append(slice(None))
        else:
            a = abs(c)
            lo, mid, hi = slice(0, size - 2 * a), slice(a, size - a), slice(2 * a, size)
            if c > 0:
                sl_m.append(lo); sl_c.append(mid); sl_p.append(hi)
            else:
                sl_m.append(hi); sl_c.append(mid); sl_p.append(lo)
    return values[tuple(sl_m)], values[tuple(sl_c)], values[tuple(sl_p)]


def convexity_violation(values: np.ndarray) -> float:
    """max over stencils of ``2 f(x) - f(x-e) - f(x+e)`` (zero when midpoint convex)."""
    worst = 0.0
    for d in stencil_directions(values.ndim):
        fm, fc, fp = _shifted(values, d)
        ok = np.isfinite(fm) & np.isfinite(fc) & np.isfinite(fp)
        if ok.any():
            worst = max(worst, float((2 * fc - fm - fp)[ok].max()))
    return worst
