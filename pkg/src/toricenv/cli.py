"""Command line experiment runner.

    toricenv run --config cfg.json [--out DIR] [--override key=value ...]
    toricenv describe EXPERIMENT

Exit codes: 0 when every check passes, 2 when a tolerance check fails (a
``failure.json`` report is written), 1 on configuration or I/O errors.
The kernel thread count is read from ``TORICENV_THREADS``.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

EXPERIMENTS = {
    "envelope": "Maximal envelope of phi with the lambda-constraint on one coordinate of the gradient: "
                "the result is convex, lies below phi and equals phi at lambda <= lambda_min.",
    "equilibrium": "The Monge-Ampere measure of the envelope lives on the contact set {envelope = phi} "
                   "and agrees there with MA(phi); its mass equals the volume of the sliced polytope.",
    "exhaustion": "The exhaustion function, the largest lambda whose envelope still touches phi at x, "
                  "equals the gradient coordinate of phi for the smooth built-in metrics.",
    "bergman-converge": "k^-1 ln B_k of the partial Bergman function converges uniformly on compacts to "
                        "envelope - phi, at rate O(ln k / k).",
    "bergman-measure": "k^-n B_k rho dx converges weakly to MA(phi) restricted to the contact set; "
                       "the integral of B_k rho counts the sections (orthonormality).",
    "h0-growth": "The normalized number of lattice points in kP with alpha_j >= k lambda tends to the "
                 "volume of the sliced polytope with error O(1/k).",
    "section-H": "The section average sum alpha_j |s_alpha|^2 / (k sum |s_alpha|^2) approximates the "
                 "exhaustion function at finite k.",
    "phong-sturm": "The finite-k potentials (1/k) ln sum exp(t alpha_j) |s_alpha|^2 approach the "
                   "Legendre-transform ray built from the envelopes.",
    "geodesic": "The Legendre-transform ray solves the homogeneous Monge-Ampere equation in (x, t) "
                "and its right t-derivative at 0 is the exhaustion function.",
    "ray-envelope": "The ray equals the envelope of phi + c t on space-time with the singularity "
                    "max over lambda of lambda (x_j + t).",
    "product": "For a product metric whose variables separate, the envelope with a joint constraint "
               "a + b >= 1 is the sup over lambda of the products of factor envelopes.",
    "pushforward": "The pushforward of MA(phi) by the exhaustion function is the marginal of Lebesgue "
                   "measure on the polytope along the chosen coordinate.",
    "suite": "Runs the full acceptance battery and writes every payload CSV.",
}

DEFAULTS = {
    "experiment": None,
    "metric": "p1",
    "polytope": None,
    "grid": {"points": None, "radius": 20.0},
    "lambda": 0.5,
    "axis": 0,
    "ks": None,
    "k": None,
    "ts": [1.0],
    "delta_lambda": 1.0 / 256,
    "T": 2.5,
    "time_nodes": 33,
    "c": 1.0,
    "bins": 64,
    "region": None,
    "tolerances": {},
    "criteria": None,
    "out": "toricenv-out",
    "seed": 0,
}

TYPES = {
    "experiment": (str,), "metric": (str, dict), "polytope": (dict, type(None)), "grid": (dict,),
    "lambda": (int, float, str), "axis": (int,), "ks": (list, type(None)), "k": (int, type(None)),
    "ts": (list,), "delta_lambda": (int, float), "T": (int, float), "time_nodes": (int,),
    "c": (int, float), "bins": (int,), "region": (int, float, type(None)), "tolerances": (dict,),
    "criteria": (list, type(None)), "out": (str,), "seed": (int,),
}

GRID_KEYS = {"points", "radius"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-object {p!r}")
    node[parts[-1]] = _parse_value(raw)


def resolve_config(raw: dict) -> dict:
    """Validate keys and types and materialize every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if k == "grid":
            if not isinstance(v, dict):
                raise ConfigError("grid must be an object")
            bad = set(v) - GRID_KEYS
            if bad:
                raise ConfigError(f"unknown grid keys: {sorted(bad)}")
            cfg["grid"].update(v)
        else:
            cfg[k] = v
    for k, v in cfg.items():
        if k == "experiment" and v is None:
            raise ConfigError("'experiment' is required")
        if isinstance(v, bool) or not isinstance(v, TYPES[k]):
            raise ConfigError(f"{k!r} has invalid type {type(v).__name__}")
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}; choose from {sorted(EXPERIMENTS)}")
    pts = cfg["grid"]["points"]
    if pts is not None and (not isinstance(pts, int) or pts < 3 or pts % 2 == 0):
        raise ConfigError("grid.points must be an odd integer >= 3")
    if not isinstance(cfg["grid"]["radius"], (int, float)) or cfg["grid"]["radius"] <= 0:
        raise ConfigError("grid.radius must be positive")
    for key in ("ks", "criteria"):
        if cfg[key] is not None and not all(isinstance(v, int) and v >= 1 for v in cfg[key]):
            raise ConfigError(f"{key!r} must be a list of positive integers")
    if cfg["delta_lambda"] <= 0 or cfg["T"] < 0 or cfg["c"] <= 0 or cfg["bins"] < 1:
        raise ConfigError("delta_lambda, c and bins must be positive and T >= 0")
    if not all(isinstance(t, (int, float)) and t >= 0 for t in cfg["ts"]):
        raise ConfigError("ts must be non-negative numbers")
    return cfg


# ---------------------------------------------------------------------------
# inputs


def build_metric(cfg: dict):
    from .grid import GridFn
    from .metrics import ReferenceMetric
    from .polytope import Polytope

    spec = cfg["metric"]
    if isinstance(spec, str):
        return ReferenceMetric.builtin(spec)
    kind = spec.get("kind", "vertex-softmax")
    extra = set(spec) - {"kind", "polytope", "weights", "name", "file"}
    if extra:
        raise ConfigError(f"unknown metric keys: {sorted(extra)}")
    if kind == "custom-grid":
        if "file" not in spec:
            raise ConfigError("custom-grid metric needs 'file'")
        fn = GridFn.load(spec["file"])
        poly = Polytope.from_dict(spec["polytope"]) if "polytope" in spec else fn.tail_model
        if poly is None:
            raise ConfigError("custom-grid metric needs a polytope (in the config or the sidecar)")
        return ReferenceMetric(poly, kind="custom-grid", samples=fn, name=spec.get("name", "custom"))
    if "polytope" not in spec:
        raise ConfigError("metric object needs 'polytope'")
    return ReferenceMetric(Polytope.from_dict(spec["polytope"]), kind=kind, weights=spec.get("weights"),
                           name=spec.get("name", "custom"))


def build_grid(cfg: dict, n: int, points: int | None = None):
    from .acceptance import default_points
    from .grid import BoxGrid

    pts = cfg["grid"]["points"] or points or default_points(n)
    return BoxGrid.cube(n, float(cfg["grid"]["radius"]), pts)


def sample_metric(cfg: dict, m, points: int | None = None):
    if m.kind == "custom-grid":
        return m.samples
    return m.sample(build_grid(cfg, m.n, points))


def quad_metric(m):
    return m if m.kind == "vertex-softmax" else None


def polytope_of(cfg: dict, m=None):
    from .polytope import Polytope

    if cfg["polytope"] is not None:
        return Polytope.from_dict(cfg["polytope"])
    return (m or build_metric(cfg)).polytope


def default_ks(cfg: dict, n: int) -> list:
    if cfg["ks"] is not None:
        return sorted(cfg["ks"])
    return [8, 16, 32, 64] if n == 1 else [4, 8, 16]


def region_mask(grid, cfg: dict, default: float = 8.0):
    r = cfg["region"] if cfg["region"] is not None else default
    return grid.region_mask(-r, r)


class Tolerances:
    """Experiment tolerances with per-run overrides; unknown override names are rejected."""

    def __init__(self, defaults: dict, overrides: dict):
        bad = set(overrides) - set(defaults)
        if bad:
            raise ConfigError(f"unknown tolerance names {sorted(bad)}; expected {sorted(defaults)}")
        self.values = {**defaults, **{k: float(v) for k, v in overrides.items()}}

    def __getitem__(self, key):
        return self.values[key]


# ---------------------------------------------------------------------------
# experiments


class Outcome:
    def __init__(self, name: str):
        from .acceptance import CriterionResult

        self.result = CriterionResult(0, name)
        self.files: dict[str, tuple[str, dict]] = {}

    def add(self, *a, **kw):
        self.result.add(*a, **kw)

    def require(self, *a):
        self.result.require(*a)

    def file(self, name: str, text: str, meta: dict | None = None):
        self.files[name] = (text, meta or {})


def _table(rows, header=("k", "metric", "value")):
    from .acceptance import _table as t

    return t(list(header), rows)


def exp_envelope(cfg, out: Outcome):
    from .envelopes import max_envelope

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"below": 1e-12, "convexity": 1e-9}, cfg["tolerances"])
    res = max_envelope(phi, cfg["lambda"], cfg["axis"], m.polytope)
    env = res.envelope
    scale = 1.0 + phi.scale()
    if env.is_sentinel:
        out.require("empty constraint gives the -inf sentinel", True)
    else:
        fin = np.isfinite(env.values)
        out.add("max(envelope - phi) / scale", np.max((env.values - phi.values)[fin]) / scale, tol["below"])
        out.add("convexity violation / scale", env.convexity_violation() / scale, tol["convexity"])
    lo, _ = m.polytope.coordinate_range(cfg["axis"])
    if float(cfg["lambda"]) <= lo:
        out.require("envelope equals phi below lambda_min", np.array_equal(env.values, phi.values))
    meta = {"grid": phi.grid.to_dict(), "lambda": float(cfg["lambda"]), "axis": cfg["axis"]}
    out.file("metric.csv", phi.csv_text(), meta)
    out.file("envelope.csv", env.csv_text(), meta)
    out.file("contact.csv", phi.with_values(res.contact_mask.astype(float)).csv_text(),
             dict(meta, contact_tolerance=res.contact_tolerance))


def exp_equilibrium(cfg, out: Outcome):
    from .convex import ma_measure
    from .envelopes import equilibrium_check, max_envelope
    from .polytope import SliceConstraint, slice_volume

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"off_contact": 0.02, "matched": 0.02, "volume": 0.02}, cfg["tolerances"])
    res = max_envelope(phi, cfg["lambda"], cfg["axis"], m.polytope)
    rep = equilibrium_check(phi, res, ma_measure(phi))
    vol = m.polytope.volume
    sv = slice_volume(m.polytope, SliceConstraint(cfg["axis"], float(cfg["lambda"])), seed=cfg["seed"])
    out.add("off-contact mass", rep.mass_off_contact, tol["off_contact"] * vol)
    out.add("matched mass error", rep.matched_mass_error, tol["matched"] * vol)
    out.add("|equilibrium mass - slice volume|", abs(rep.mass_on_contact - sv), tol["volume"])
    rows = sorted(rep.to_dict().items()) + [("slice_volume", sv)]
    out.file("equilibrium.csv", _table(rows, ("metric", "value")),
             {"grid": phi.grid.to_dict(), "lambda": float(cfg["lambda"])})


def exp_exhaustion(cfg, out: Outcome):
    from .envelopes import exhaustion

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"gradient": 3.0}, cfg["tolerances"])
    dl = float(cfg["delta_lambda"])
    H = exhaustion(phi, cfg["axis"], m.polytope, dl)
    if m.kind == "vertex-softmax":
        grad = m.gradient(phi.grid.points())[:, cfg["axis"]].reshape(phi.grid.shape)
        reg = region_mask(phi.grid, cfg)
        out.add("sup |H - gradient|", np.max(np.abs(H.values - grad)[reg]), dl + tol["gradient"] * phi.grid.h)
    else:
        out.require("H defined on every finite node", bool(np.all(np.isfinite(H.values[np.isfinite(phi.values)]))))
    out.file("exhaustion.csv", H.as_gridfn().csv_text(), {"grid": phi.grid.to_dict(), "delta_lambda": dl})


def _bases(cfg, m, phi, ks):
    from .bergman import monomial_norms

    return {k: monomial_norms(phi, k, m.polytope, cfg["axis"], metric=quad_metric(m)) for k in ks}


def exp_bergman_converge(cfg, out: Outcome):
    from .bergman import bergman_log_convergence
    from .envelopes import max_envelope

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    ks = default_ks(cfg, m.n)
    tol = Tolerances({"log_constant": 3.0}, cfg["tolerances"])
    res = max_envelope(phi, cfg["lambda"], cfg["axis"], m.polytope)
    rep = bergman_log_convergence(phi, res.envelope, m.polytope, cfg["lambda"], cfg["axis"], ks,
                                  region_mask(phi.grid, cfg), bases=_bases(cfg, m, phi, ks))
    k, dev = rep["rows"][-1]
    out.require("deviation strictly decreasing", rep["decreasing"] or len(ks) == 1)
    out.add(f"deviation at k={k}", dev, (m.n * math.log(k) + tol["log_constant"]) / k)
    out.file("bergman_log.csv", _table([(k, "sup_deviation", d) for k, d in rep["rows"]]),
             {"grid": phi.grid.to_dict(), "lambda": float(cfg["lambda"]), "fit_c0_c1": rep["fit"]})


def exp_bergman_measure(cfg, out: Outcome):
    from .bergman import bergman_measure_convergence, parseval_check
    from .convex import ma_measure
    from .envelopes import max_envelope

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    ks = default_ks(cfg, m.n)
    tol = Tolerances({"l1": 0.1, "parseval": 1e-6}, cfg["tolerances"])
    res = max_envelope(phi, cfg["lambda"], cfg["axis"], m.polytope)
    bases = _bases(cfg, m, phi, ks)
    rep = bergman_measure_convergence(phi, m.polytope, cfg["lambda"], cfg["axis"], ks, ma_measure(phi),
                                      res.contact_mask, metric=quad_metric(m), bases=bases)
    k, dist = rep["rows"][-1]
    out.require("L1 distance decreasing", rep["decreasing"] or len(ks) == 1)
    out.add(f"L1 distance at k={k}", dist, tol["l1"])
    par = max(parseval_check(bases[k], phi, cfg["lambda"])["relative_error"] for k in ks)
    out.add("Parseval relative error", par, tol["parseval"])
    out.file("bergman_measure.csv", _table([(k, "l1", d) for k, d in rep["rows"]]),
             {"grid": phi.grid.to_dict(), "lambda": float(cfg["lambda"])})


def exp_h0_growth(cfg, out: Outcome):
    from .bergman import h0_growth

    poly = polytope_of(cfg)
    ks = default_ks(cfg, poly.n)
    tol = Tolerances({"constant": 3.0}, cfg["tolerances"])
    rep = h0_growth(poly, cfg["axis"], cfg["lambda"], ks)
    for row in rep["rows"]:
        out.add(f"k={row['k']} |count - slice volume|", abs(row["normalized"] - rep["slice_volume"]),
                tol["constant"] / row["k"])
    rows = [(r["k"], "normalized_count", r["normalized"]) for r in rep["rows"]]
    out.file("h0_growth.csv", _table(rows), {"polytope": poly.to_dict(), "lambda": float(cfg["lambda"]),
                                             "slice_volume": rep["slice_volume"],
                                             "jumping": {r["k"]: r["jumping"] for r in rep["rows"]}})


def exp_section_h(cfg, out: Outcome):
    from .bergman import monomial_norms, section_exhaustion
    from .envelopes import exhaustion

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    k = cfg["k"] or max(default_ks(cfg, m.n))
    tol = Tolerances({"sup": 0.05}, cfg["tolerances"])
    basis = monomial_norms(phi, k, m.polytope, cfg["axis"], metric=quad_metric(m))
    se = section_exhaustion(basis, phi)
    H = exhaustion(phi, cfg["axis"], m.polytope, float(cfg["delta_lambda"]))
    reg = region_mask(phi.grid, cfg, 6.0)
    out.add(f"sup |section average - H| at k={k}", np.max(np.abs(se.values - H.values)[reg]), tol["sup"])
    out.file("section_exhaustion.csv", se.csv_text(), {"grid": phi.grid.to_dict(), "k": k})


def exp_phong_sturm(cfg, out: Outcome):
    from .bergman import monomial_norms, phong_sturm_metric
    from .envelopes import TestCurve, legendre_ray

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    k = cfg["k"] or max(default_ks(cfg, m.n))
    tol = Tolerances({"sup": 0.15}, cfg["tolerances"])
    basis = monomial_norms(phi, k, m.polytope, cfg["axis"], metric=quad_metric(m))
    reg = region_mask(phi.grid, cfg)
    curve = TestCurve(cfg["axis"], float(cfg["c"]), float(cfg["delta_lambda"]))
    for t in cfg["ts"]:
        ps = phong_sturm_metric(basis, phi, float(t))
        if t > 0:
            target = legendre_ray(phi, curve, float(t), 3, m.polytope, convex_pass=False).values[-1]
        else:
            target = phi.values
        out.add(f"t={t} sup distance to the ray", np.max(np.abs(ps.values - target)[reg]), tol["sup"])
        out.file(f"phong_sturm_t{t}.csv", ps.csv_text(), {"grid": phi.grid.to_dict(), "k": k, "t": float(t)})


def exp_geodesic(cfg, out: Outcome):
    from .envelopes import TestCurve, exhaustion, hmae_residual, legendre_ray, right_derivative

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"hmae": 10.0, "derivative": 3.0}, cfg["tolerances"])
    dl = float(cfg["delta_lambda"])
    curve = TestCurve(cfg["axis"], float(cfg["c"]), dl)
    ray = legendre_ray(phi, curve, float(cfg["T"]), cfg["time_nodes"], m.polytope)
    h = phi.grid.h
    out.add("HMAE residual", hmae_residual(ray), tol["hmae"] * h)
    rd = right_derivative(ray)
    H = exhaustion(phi, cfg["axis"], m.polytope, dl)
    dt = float(ray.t[1] - ray.t[0])
    reg = region_mask(phi.grid, cfg)
    out.add("sup |right derivative - H|", np.max(np.abs(rd.values.values - H.values)[reg]), dl + dt + tol["derivative"] * h)
    out.require("difference quotients non-increasing in the step", rd.monotone)
    meta = {"grid": phi.grid.to_dict(), "T": float(cfg["T"]), "time_nodes": cfg["time_nodes"], "delta_lambda": dl}
    out.file("ray.csv", ray.space_time().csv_text(), meta)
    out.file("right_derivative.csv", rd.values.csv_text(), meta)


def exp_ray_envelope(cfg, out: Outcome):
    from .envelopes import TestCurve, ray_as_envelope_check

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"factor": 5.0}, cfg["tolerances"])
    dl = float(cfg["delta_lambda"])
    T = float(cfg["T"])
    rep = ray_as_envelope_check(phi, TestCurve(cfg["axis"], float(cfg["c"]), dl), T, cfg["time_nodes"], m.polytope)
    out.add("interior sup difference", rep.sup_difference, tol["factor"] * (phi.grid.h + dl * T))
    out.file("ray_envelope.csv", _table(sorted(rep.to_dict().items()), ("metric", "value")),
             {"grid": phi.grid.to_dict(), "T": T, "delta_lambda": dl})


def exp_product(cfg, out: Outcome):
    from .envelopes import lambda_grid, product_envelope_check

    m = build_metric(cfg)
    if m.n != 1:
        raise ConfigError("the product experiment takes a one-dimensional factor metric")
    phi = sample_metric(cfg, m, points=129)
    tol = Tolerances({"factor": 5.0, "one_sided": 2.0}, cfg["tolerances"])
    dl = float(cfg["delta_lambda"])
    lo, hi = (float(v) for v in m.polytope.coordinate_range(0))
    rep = product_envelope_check(phi, phi, lambda_grid(0, 1, dl), (lo, hi), (lo, hi))
    h = phi.grid.h
    out.add("sup difference", rep.sup_difference, tol["factor"] * (h + dl))
    out.add("one-sided difference", rep.one_sided, tol["one_sided"] * h)
    meta = {"grid": rep.lhs.grid.to_dict(), "delta_lambda": dl}
    out.file("product_joint.csv", rep.lhs.csv_text(), meta)
    out.file("product_split.csv", rep.rhs.csv_text(), meta)


def exp_pushforward(cfg, out: Outcome):
    from . import okounkov as O
    from .convex import lower_hull, ma_measure
    from .envelopes import equilibrium_check, exhaustion, max_envelope
    from .polytope import SliceConstraint, slice_volume

    m = build_metric(cfg)
    phi = sample_metric(cfg, m)
    tol = Tolerances({"cdf": 0.02 if m.n == 1 else 0.03, "mass": 1e-9, "triangle": 0.02}, cfg["tolerances"])
    hull = lower_hull(phi)
    mu = ma_measure(phi, hull=hull)
    H = exhaustion(phi, cfg["axis"], m.polytope, float(cfg["delta_lambda"]), hull=hull)
    hist = O.pushforward_H(H, mu, cfg["bins"])
    ref = O.pushforward_polytope(m.polytope, cfg["axis"], cfg["bins"])
    out.add("cdf distance", O.cdf_distance(hist, ref), tol["cdf"])
    out.add("relative mass defect", abs(hist.total - mu.total) / mu.total, tol["mass"])
    lam = float(cfg["lambda"])
    rep = equilibrium_check(phi, max_envelope(phi, lam, cfg["axis"], m.polytope, hull=hull), mu)
    spread = O.pushforward_H(H, mu, cfg["bins"], spread="uniform")
    tri = O.consistency_triangle(spread, rep.mass_on_contact,
                                 slice_volume(m.polytope, SliceConstraint(cfg["axis"], lam), seed=cfg["seed"]), lam)
    out.add("consistency triangle max relative gap", tri["max_gap"], tol["triangle"])
    meta = {"grid": phi.grid.to_dict(), "bins": cfg["bins"]}
    out.file("pushforward_H.csv", hist.csv_text(), meta)
    out.file("pushforward_polytope.csv", ref.csv_text(), meta)


def exp_suite(cfg, out: Outcome):
    from . import acceptance as A

    numbers = cfg["criteria"] or sorted(A.CRITERIA)
    bad = set(numbers) - set(A.CRITERIA)
    if bad:
        raise ConfigError(f"unknown criteria {sorted(bad)}")
    suite = []
    for res in A.run_suite(numbers, timed=True):
        print(res.line(), flush=True)
        out.require(f"criterion {res.number}", res.passed)
        for name, text in res.artifacts.items():
            out.file(f"criterion_{res.number:02d}/{name}", text, {"criterion": res.number})
        suite.append(res.to_dict())
    out.result.notes["criteria"] = suite


RUNNERS = {
    "envelope": exp_envelope, "equilibrium": exp_equilibrium, "exhaustion": exp_exhaustion,
    "bergman-converge": exp_bergman_converge, "bergman-measure": exp_bergman_measure,
    "h0-growth": exp_h0_growth, "section-H": exp_section_h, "phong-sturm": exp_phong_sturm,
    "geodesic": exp_geodesic, "ray-envelope": exp_ray_envelope, "product": exp_product,
    "pushforward": exp_pushforward, "suite": exp_suite,
}


# ---------------------------------------------------------------------------
# driver


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def run_experiment(cfg: dict, out_dir: Path, threads: int) -> int:
    from . import __version__
    from .bergman import DENSITY_ID

    outcome = Outcome(cfg["experiment"])
    RUNNERS[cfg["experiment"]](cfg, outcome)
    target = out_dir / cfg["experiment"]
    target.mkdir(parents=True, exist_ok=True)
    header = {"config": cfg, "density": DENSITY_ID, "version": __version__}
    for name, (text, meta) in outcome.files.items():
        path = target / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(_jsonable({**header, **meta}), indent=2, sort_keys=True))
    res = outcome.result
    report = {
        "experiment": cfg["experiment"],
        "passed": res.passed,
        "checks": [c.__dict__ for c in res.checks],
        "notes": res.notes,
        "resolved_config": cfg,
        "files": sorted(outcome.files),
        "metadata": {
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "threads": threads, "python": platform.python_version(),
            "version": __version__, "density": DENSITY_ID,
        },
    }
    (target / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    for c in res.checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.text()}")
    if not res.passed:
        failure = {"experiment": cfg["experiment"], "resolved_config": cfg,
                   "failed_checks": [c.__dict__ for c in res.checks if not c.passed]}
        (target / "failure.json").write_text(json.dumps(_jsonable(failure), indent=2, sort_keys=True))
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toricenv", description="Toric envelope and Bergman experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True, help="path to the JSON config")
    r.add_argument("--out", help="output directory (overrides the config's 'out')")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry; dotted keys reach into objects, values parse as JSON")
    d = sub.add_parser("describe", help="print what an experiment checks")
    d.add_argument("experiment")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    if args.command == "describe":
        text = EXPERIMENTS.get(args.experiment)
        if text is None:
            print(f"unknown experiment {args.experiment!r}; choose from {', '.join(sorted(EXPERIMENTS))}",
                  file=sys.stderr)
            return 1
        print(f"{args.experiment}: {text}")
        return 0
    try:
        from ._kernels import configure_threads

        threads = configure_threads()
        raw = json.loads(Path(args.config).read_text())
        for item in args.override:
            apply_override(raw, item)
        cfg = resolve_config(raw)
        if args.out:
            cfg["out"] = args.out
        return run_experiment(cfg, Path(cfg["out"]), threads)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
