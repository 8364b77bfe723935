"""Quantitative acceptance battery.

Each criterion returns a :class:`CriterionResult` holding named checks
(value, tolerance, pass flag), its runtime and CSV payloads.  The payloads
contain computed numbers only, so two runs can be compared byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import bergman as B
from . import okounkov as O
from .convex import biconjugate, legendre_transform, lower_hull, ma_measure, second_difference_sup
from .envelopes import (
    DEFAULT_DELTA_LAMBDA, TestCurve, equilibrium_check, exhaustion, hmae_residual, lambda_grid,
    legendre_ray, max_envelope, product_envelope_check, ray_as_envelope_check, right_derivative,
)
from .grid import BoxGrid, GridFn
from .metrics import ReferenceMetric
from .polytope import SliceConstraint, lattice_points, slice_volume

GEODESIC_T = 2.5
GEODESIC_MT = 33
KS_1D = (8, 16, 32, 64)
KS_2D = (4, 8, 16)


@dataclass
class Check:
    label: str
    value: float
    tolerance: float
    passed: bool
    relation: str = "<="

    def text(self) -> str:
        return f"{self.label}={self.value:.4g} {self.relation} {self.tolerance:.4g}"


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list = field(default_factory=list)
    runtime: float = 0.0
    artifacts: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, label: str, value: float, tolerance: float, relation: str = "<=") -> None:
        value = float(value)
        ops = {"<=": value <= tolerance, ">=": value >= tolerance, "<": value < tolerance}
        self.checks.append(Check(label, value, float(tolerance), bool(ops[relation]), relation))

    def require(self, label: str, ok: bool) -> None:
        self.checks.append(Check(label, float(bool(ok)), 1.0, bool(ok), "=="))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.error:
            detail = f"error: {self.error}"
        else:
            failed = [c for c in self.checks if not c.passed]
            shown = failed if failed else self.checks[:3]
            detail = "; ".join(c.text() for c in shown)
        return f"criterion {self.number:2d} {status}  {self.title} ({self.runtime:.1f}s): {detail}"

    def to_dict(self) -> dict:
        return {
            "number": self.number, "title": self.title, "passed": self.passed, "runtime": self.runtime,
            "error": self.error, "notes": self.notes,
            "checks": [c.__dict__ for c in self.checks],
        }


def _table(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# shared, cached inputs


def default_points(n: int) -> int:
    return {1: 513, 2: 129, 3: 33}[n]


@lru_cache(maxsize=None)
def metric(name: str) -> ReferenceMetric:
    return ReferenceMetric.builtin(name)


@lru_cache(maxsize=None)
def sample(name: str, points: int | None = None) -> GridFn:
    m = metric(name)
    return m.sample(BoxGrid.cube(m.n, points=points or default_points(m.n)))


@lru_cache(maxsize=None)
def hull(name: str, points: int | None = None):
    return lower_hull(sample(name, points))


@lru_cache(maxsize=None)
def measure(name: str, points: int | None = None):
    return ma_measure(sample(name, points), hull=hull(name, points))


@lru_cache(maxsize=None)
def envelope(name: str, lam: float, points: int | None = None, axis: int = 0):
    m = metric(name)
    return max_envelope(sample(name, points), lam, axis, m.polytope, hull=hull(name, points))


@lru_cache(maxsize=None)
def basis(name: str, k: int, points: int | None = None):
    m = metric(name)
    return B.monomial_norms(sample(name, points), k, m.polytope, 0, metric=m)


@lru_cache(maxsize=None)
def ray(name: str, points: int, m_t: int, delta_lambda: float, T: float = GEODESIC_T):
    m = metric(name)
    return legendre_ray(sample(name, points), TestCurve(0, 1.0, delta_lambda), T, m_t, m.polytope)


def clear_cache() -> None:
    for fn in (metric, sample, hull, measure, envelope, basis, ray):
        fn.cache_clear()


# ---------------------------------------------------------------------------
# criteria


def criterion_01() -> CriterionResult:
    r = CriterionResult(1, "Legendre involution and conjugate oracle")
    rows = []
    for name in ("p1", "simplex", "p1xp1"):
        f = sample(name)
        fstar = legendre_transform(f, metric(name).polytope)
        err = float(np.max(np.abs(biconjugate(fstar, f.grid).values - f.values)))
        r.add(f"{name} involution", err, 2 * f.grid.h)
        rows.append((name, "involution_error", err))
        if name == "p1":
            a = fstar.points[:, 0]
            j = int(np.argmin(np.abs(a - 0.5)))
            val = float(fstar.feasible_values[j])
            r.add("p1 conjugate(1/2)+ln2", abs(val + math.log(2)), 1e-6)
            rows.append((name, "conjugate_half", val))
    r.artifacts["involution.csv"] = _table(["metric", "quantity", "value"], rows)
    return r


def criterion_02() -> CriterionResult:
    r = CriterionResult(2, "envelope closed form")
    f = sample("p1")
    res = envelope("p1", 0.5)
    x = f.grid.axes[0]
    closed = np.where(x < 0, x / 2 + math.log(2), f.values)
    region = np.abs(x) <= 10
    r.add("sup error on [-10,10]", np.max(np.abs(res.envelope.values - closed)[region]), 3 * f.grid.h)
    r.artifacts["envelope_p1_half.csv"] = res.envelope.csv_text()
    return r


def criterion_03() -> CriterionResult:
    r = CriterionResult(3, "equality of measures on the contact set")
    rows = []
    for name in ("p1", "simplex", "p1xp1"):
        vol = metric(name).polytope.volume
        f = sample(name)
        for lam in (0.25, 0.5):
            rep = equilibrium_check(f, envelope(name, lam), phi_measure=measure(name))
            r.add(f"{name} lam={lam} off-contact mass", rep.mass_off_contact, 0.02 * vol)
            r.add(f"{name} lam={lam} matched error", rep.matched_mass_error, 0.02 * vol)
            rows.append((name, lam, rep.mass_off_contact, rep.matched_mass_error, rep.mass_on_contact))
    r.artifacts["equilibrium.csv"] = _table(["metric", "lambda", "off_contact", "matched_error", "on_contact"], rows)
    return r


def criterion_04() -> CriterionResult:
    r = CriterionResult(4, "volume identity")
    rows = []
    for name, k in (("p1", 64), ("simplex", 16), ("p1xp1", 16)):
        m = metric(name)
        f = sample(name)
        pts = lattice_points(m.polytope, k)
        for lam in (0.25, 0.5):
            sv = slice_volume(m.polytope, SliceConstraint(0, lam))
            rep = equilibrium_check(f, envelope(name, lam), phi_measure=measure(name))
            count = int(np.sum(pts[:, 0] >= B.filtration_threshold(k, lam))) / k ** m.n
            r.add(f"{name} lam={lam} |equilibrium mass - slice|", abs(rep.mass_on_contact - sv), 0.02)
            r.add(f"{name} lam={lam} k={k} |count - slice|", abs(count - sv), 3 / k)
            rows.append((name, lam, rep.mass_on_contact, rep.phi_mass_on_contact, count, sv))
    r.artifacts["volume.csv"] = _table(
        ["metric", "lambda", "equilibrium_mass", "phi_mass_on_contact_nodes", "normalized_count", "slice_volume"], rows)
    return r


def criterion_05() -> CriterionResult:
    r = CriterionResult(5, "Bergman uniform convergence")
    f = sample("p1")
    x = f.grid.axes[0]
    res = envelope("p1", 0.5)
    out = B.bergman_log_convergence(f, res.envelope, metric("p1").polytope, 0.5, 0, KS_1D, np.abs(x) <= 8,
                                    bases={k: basis("p1", k) for k in KS_1D})
    dev = [d for _, d in out["rows"]]
    r.require("strictly decreasing", out["decreasing"])
    r.add("deviation(64)", dev[-1], (math.log(64) + 3) / 64)
    r.notes["fit"] = out["fit"]
    r.artifacts["bergman_log.csv"] = _table(["k", "metric", "value"], [(k, "sup_deviation", d) for k, d in out["rows"]])
    return r


def criterion_06() -> CriterionResult:
    r = CriterionResult(6, "Bergman measure convergence")
    f = sample("p1")
    m = metric("p1")
    res = envelope("p1", 0.5)
    bases = {k: basis("p1", k) for k in KS_1D}
    out = B.bergman_measure_convergence(f, m.polytope, 0.5, 0, KS_1D, measure("p1"), res.contact_mask,
                                        metric=m, bases=bases)
    dist = [d for _, d in out["rows"]]
    r.require("decreasing", out["decreasing"])
    r.add("L1(64)", dist[-1], 0.1)
    worst = max(B.parseval_check(bases[k], f, lam)["relative_error"] for k in KS_1D for lam in (0.0, 0.5))
    r.add("Parseval relative error", worst, 1e-6)
    r.artifacts["bergman_measure.csv"] = _table(["k", "metric", "value"], [(k, "l1", d) for k, d in out["rows"]])
    return r


def criterion_07() -> CriterionResult:
    from scipy.special import betaln

    r = CriterionResult(7, "constant Bergman identity")
    f = sample("p1")
    rows = []
    worst_b, worst_n = 0.0, 0.0
    for k in (4,) + KS_1D:
        b = basis("p1", k)
        a = b.alphas[:, 0]
        worst_n = max(worst_n, float(np.max(np.abs(np.expm1(b.log_norms - betaln(a + 1, k - a + 1))))))
        Bk, _ = B.partial_bergman(b, f, 0)
        dev = float(np.max(np.abs(Bk.values / (k + 1) - 1)))
        worst_b = max(worst_b, dev)
        rows.append((k, "relative_deviation", dev))
    r.add("max |B_k/(k+1) - 1|", worst_b, 1e-6)
    r.add("max relative norm error vs Beta", worst_n, 1e-8)
    r.artifacts["constant_bergman.csv"] = _table(["k", "metric", "value"], rows)
    return r


def criterion_08() -> CriterionResult:
    r = CriterionResult(8, "exhaustion equals the gradient")
    rows = []
    for name in ("p1", "simplex", "p1xp1"):
        m = metric(name)
        f = sample(name)
        reg = f.grid.region_mask(-8, 8)
        grad = m.gradient(f.grid.points()).reshape(f.grid.shape + (m.n,))
        for axis in range(m.n):
            H = exhaustion(f, axis, m.polytope, DEFAULT_DELTA_LAMBDA, hull=hull(name))
            err = float(np.max(np.abs(H.values - grad[..., axis])[reg]))
            r.add(f"{name} axis {axis}", err, DEFAULT_DELTA_LAMBDA + 3 * f.grid.h)
            rows.append((name, axis, err))
    r.artifacts["exhaustion.csv"] = _table(["metric", "axis", "sup_error"], rows)
    return r


def criterion_09() -> CriterionResult:
    r = CriterionResult(9, "right derivative of the ray")
    f = sample("p1")
    rv = ray("p1", 513, GEODESIC_MT, DEFAULT_DELTA_LAMBDA)
    H = exhaustion(f, 0, metric("p1").polytope, DEFAULT_DELTA_LAMBDA, hull=hull("p1"))
    rd = right_derivative(rv)
    reg = f.grid.region_mask(-8, 8)
    dt = float(rv.t[1] - rv.t[0])
    r.add("sup |derivative - H| on [-8,8]", np.max(np.abs(rd.values.values - H.values)[reg]),
          DEFAULT_DELTA_LAMBDA + dt + 3 * f.grid.h)
    r.add("convexity violation in t", rd.max_violation, 1e-9 * (1 + float(np.max(np.abs(rv.values[0])))) / dt)
    r.artifacts["right_derivative.csv"] = rd.values.csv_text()
    return r


def criterion_10() -> CriterionResult:
    r = CriterionResult(10, "section-based exhaustion")
    f = sample("p1")
    H = exhaustion(f, 0, metric("p1").polytope, DEFAULT_DELTA_LAMBDA, hull=hull("p1"))
    se = B.section_exhaustion(basis("p1", 64), f)
    reg = f.grid.region_mask(-6, 6)
    r.add("sup on [-6,6]", np.max(np.abs(se.values - H.values)[reg]), 0.05)
    r.artifacts["section_exhaustion.csv"] = se.csv_text()
    return r


HMAE_LEVELS = ((257, 17, 1 / 64), (513, 33, 1 / 181))


def criterion_11() -> CriterionResult:
    """Residuals scale like (delta_lambda / h)^2, so halving needs delta_lambda ~ h^(3/2)."""
    r = CriterionResult(11, "HMAE degeneracy")
    rows = []
    res = []
    for pts, mt, dl in HMAE_LEVELS:
        rv = ray("p1", pts, mt, dl)
        h = rv.grid.h
        val = hmae_residual(rv)
        r.add(f"residual at {pts} points", val, 10 * h)
        res.append(val)
        rows.append((pts, mt, dl, val))
    ratio = res[1] / res[0]
    r.add("refinement ratio lower", ratio, 0.4, ">=")
    r.add("refinement ratio upper", ratio, 0.6)
    r.artifacts["hmae.csv"] = _table(["points", "time_nodes", "delta_lambda", "residual"], rows)
    return r


RAY_LEVELS = ((257, 17, 1 / 128), (513, 33, 1 / 256))


def criterion_12() -> CriterionResult:
    r = CriterionResult(12, "ray as an envelope")
    rows = []
    sups = []
    for pts, mt, dl in RAY_LEVELS:
        f = sample("p1", pts)
        rv = ray("p1", pts, mt, dl)
        rep = ray_as_envelope_check(f, TestCurve(0, 1.0, dl), GEODESIC_T, mt, metric("p1").polytope, ray=rv)
        r.add(f"sup difference at {pts} points", rep.sup_difference, 5 * (f.grid.h + dl * GEODESIC_T))
        sups.append(rep.sup_difference)
        rows.append((pts, mt, dl, rep.sup_difference, rep.boundary_difference))
    r.add("refined / coarse", sups[1] / sups[0], 1.0, "<")
    r.artifacts["ray_envelope.csv"] = _table(["points", "time_nodes", "delta_lambda", "sup", "boundary"], rows)
    return r


PRODUCT_LEVELS = ((65, 1 / 128), (129, 1 / 256))


def criterion_13() -> CriterionResult:
    r = CriterionResult(13, "product of envelopes")
    rows = []
    sups = []
    for pts, dl in PRODUCT_LEVELS:
        f = sample("p1", pts)
        rep = product_envelope_check(f, f, lambda_grid(0, 1, dl))
        h = f.grid.h
        r.add(f"sup difference at {pts}", rep.sup_difference, 5 * (h + dl))
        r.add(f"one-sided at {pts}", rep.one_sided, 2 * h)
        sups.append(rep.sup_difference)
        rows.append((pts, dl, rep.sup_difference, rep.one_sided))
    r.add("refined / coarse", sups[1] / sups[0], 1.0, "<")
    r.artifacts["product.csv"] = _table(["points", "delta_lambda", "sup", "one_sided"], rows)
    return r


def criterion_14() -> CriterionResult:
    r = CriterionResult(14, "pushforward of the Monge-Ampere measure")
    for name, tol in (("p1", 0.02), ("simplex", 0.03)):
        m = metric(name)
        mu = measure(name)
        H = exhaustion(sample(name), 0, m.polytope, DEFAULT_DELTA_LAMBDA, hull=hull(name))
        hist = O.pushforward_H(H, mu)
        ref = O.pushforward_polytope(m.polytope, 0)
        r.add(f"{name} cdf distance", O.cdf_distance(hist, ref), tol)
        r.add(f"{name} mass conservation", abs(hist.total - mu.total) / mu.total, 1e-9)
        r.artifacts[f"pushforward_{name}.csv"] = hist.csv_text()
    return r


def criterion_15() -> CriterionResult:
    r = CriterionResult(15, "C^{1,1} surrogate")
    vals = []
    for pts in (513, 1025):
        res = envelope("p1", 0.5, pts)
        vals.append(second_difference_sup(res.envelope, res.envelope.grid.region_mask(-10, 10)))
    r.add("relative change", abs(vals[1] - vals[0]) / vals[0], 0.10)
    r.add("|sup - 1/4|", abs(vals[0] - 0.25), 0.05)
    r.artifacts["second_difference.csv"] = _table(["points", "sup"], list(zip((513, 1025), vals)))
    return r


def _max_threads() -> int:
    import numba

    return numba.config.NUMBA_NUM_THREADS


def criterion_16(numbers: tuple = tuple(range(1, 16))) -> CriterionResult:
    """Run the suite through the command line at 1 and all threads and compare CSV bytes."""
    r = CriterionResult(16, "determinism across thread counts")
    # at least 4 workers even on small machines, so the parallel path really runs
    counts = [1, max(_max_threads(), 4)]
    with tempfile.TemporaryDirectory() as tmp:
        payloads = []
        for i, c in enumerate(counts):
            out = Path(tmp) / f"run{i}"
            cfg = Path(tmp) / "suite.json"
            cfg.write_text(json.dumps({"experiment": "suite", "criteria": list(numbers)}))
            env = dict(os.environ, TORICENV_THREADS=str(c), NUMBA_NUM_THREADS=str(counts[-1]))
            proc = subprocess.run([sys.executable, "-m", "toricenv.cli", "run", "--config", str(cfg), "--out", str(out)],
                                  env=env, capture_output=True, text=True)
            if proc.returncode == 1:
                r.error = f"suite run failed: {proc.stderr.strip()[-400:]}"
                return r
            payloads.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))})
        same = payloads[0].keys() == payloads[1].keys() and all(payloads[0][k] == payloads[1][k] for k in payloads[0])
    r.notes["thread_counts"] = counts
    r.notes["files"] = len(payloads[0])
    r.require(f"CSV payloads identical at threads {counts}", same and len(payloads[0]) > 0)
    return r


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    i: globals()[f"criterion_{i:02d}"] for i in range(1, 17)
}


def run_criterion(number: int) -> CriterionResult:
    fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        res = fn()
    except Exception as exc:  # reported as a failed criterion, not a crash
        res = CriterionResult(number, fn.__name__, error=f"{type(exc).__name__}: {exc}")
    res.runtime = time.perf_counter() - t0
    return res


RUNTIME_LIMITS = {1: 1.0, 2: 1.0, 3: 30.0, 5: 10.0, 8: 60.0, 16: 1200.0}


def apply_runtime_limit(res: CriterionResult) -> CriterionResult:
    """Add the criterion's wall-clock bound as a check."""
    limit = RUNTIME_LIMITS.get(res.number)
    if limit is not None and res.error is None:
        res.add("runtime seconds", res.runtime, limit)
    return res


def run_suite(numbers=None, timed: bool = True) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else sorted(numbers)
    out = []
    for i in numbers:
        res = run_criterion(i)
        out.append(apply_runtime_limit(res) if timed else res)
    return out
