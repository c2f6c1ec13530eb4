"""Config-driven experiments: scan, diameter, eigensolve, bounds, checks.

A config is a JSON object::

    {"name": "sphere",
     "domain": {"kind": "sphere", "size": 1.0, "resolution": 4},
     "metric": {"kind": "euclidean", "params": {}},
     "volume": {"kind": "riemannian"},
     "solver": {"tol": 1e-8, "max_outer": 200, "seed": 0, "damping": 1.0},
     "scan": {"directions_per_vertex": 32, "N_list": [3, "inf"]},
     "stages": ["all"],
     "checks": {"bochner": {"u_expr": "sin(x1)"}}}

Expressions (``phi_expr``, field-valued metric data, test fields) are
sympy strings in x1, x2, ... (chart coordinates on circle and torus,
ambient R^3 coordinates on the sphere).
"""

from __future__ import annotations

import csv
import importlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import sympy

from . import bounds as B
from . import calculus, domain, metric as M, spectral, volume as V
from .errors import ConfigError, FinslerError

STAGE_ORDER = ("scan", "diameter", "eigen", "bounds", "bochner", "trace",
               "volume_comparison", "zhong_yang")
CORE_STAGES = ("scan", "diameter", "eigen", "bounds")
EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2


# -- config parsing ----------------------------------------------------------

def _symbols(d):
    return sympy.symbols(" ".join(f"x{i + 1}" for i in range(d)), seq=True)


def expression(text, d, where):
    """A jax-traceable callable ``x -> value`` from a sympy string."""
    import jax.numpy as jnp
    syms = _symbols(d)
    try:
        expr = sympy.sympify(text, locals={s.name: s for s in syms})
    except (sympy.SympifyError, TypeError, SyntaxError) as exc:
        raise ConfigError(f"{where}: cannot parse expression {text!r}") from exc
    extra = expr.free_symbols - set(syms)
    if extra:
        raise ConfigError(f"{where}: unknown symbols {sorted(map(str, extra))}")
    f = sympy.lambdify(syms, expr, modules="jax")

    def fn(x):
        return jnp.asarray(f(*[x[i] for i in range(d)]), dtype=float) + 0.0 * x[0]

    return fn


def _field(spec, d, where):
    """Constant array or an array of expressions."""
    import jax.numpy as jnp
    arr = np.asarray(spec, dtype=object)
    if all(isinstance(v, (int, float)) for v in arr.ravel()):
        return np.asarray(spec, dtype=float)
    fns = [expression(str(v), d, where) for v in arr.ravel()]
    shape = arr.shape

    def fn(x):
        return jnp.stack([f(x) for f in fns]).reshape(shape)

    return fn


def _n_value(v, where):
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity")):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {v!r} is not a number or 'inf'") from exc


def _get(cfg, key, where, kind=dict):
    val = cfg.get(key, kind())
    if not isinstance(val, kind):
        raise ConfigError(f"{where}.{key} must be a {kind.__name__}")
    return val


AMBIENT_DIM = {"circle": 1, "flat_torus": 2, "sphere": 3}
DOMAIN_ALIASES = {"torus": "flat_torus", "s1": "circle", "s2": "sphere"}


def build_domain(cfg) -> domain.DomainSpec:
    d = _get(cfg, "domain", "config")
    kind = d.get("kind")
    kind = DOMAIN_ALIASES.get(kind, kind)
    if kind not in AMBIENT_DIM:
        raise ConfigError(f"domain.kind: unsupported domain {d.get('kind')!r}")
    met = build_metric(cfg, AMBIENT_DIM[kind])
    size = d.get("size")
    try:
        if kind == "flat_torus":
            size = [2 * math.pi, 2 * math.pi] if size is None else size
            size = [float(size)] * 2 if isinstance(size, (int, float)) else [float(s) for s in size]
            return domain.flat_torus(*size, metric=met)
        r = 1.0 if size is None else float(size if not isinstance(size, list) else size[0])
        return (domain.circle if kind == "circle" else domain.sphere)(r, metric=met)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain.size: invalid value {size!r}") from exc


def build_metric(cfg, d) -> M.MetricDescriptor:
    m = _get(cfg, "metric", "config")
    kind = m.get("kind", "euclidean")
    p = m.get("params", {}) or {}
    if not isinstance(p, dict):
        raise ConfigError("metric.params must be an object")
    if kind == "euclidean":
        met = M.euclidean(d)
    elif kind == "riemannian":
        if "a" not in p:
            raise ConfigError("metric.params.a is required for a riemannian metric")
        a = _field(p["a"], d, "metric.params.a")
        met = M.riemannian(a, n=d)
    elif kind == "randers":
        if "b" not in p:
            raise ConfigError("metric.params.b is required for a randers metric")
        b = _field(p["b"], d, "metric.params.b")
        a = None if p.get("a") is None else _field(p["a"], d, "metric.params.a")
        if callable(a) or callable(b):
            met = M.randers(b, a, n=d)
        else:
            met = M.randers(b, a)
    elif kind == "custom":
        ref = p.get("norm")
        if not isinstance(ref, str) or ":" not in ref:
            raise ConfigError("metric.params.norm must be 'module:function'")
        mod, _, name = ref.partition(":")
        try:
            fn = getattr(importlib.import_module(mod), name)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"metric.params.norm: cannot load {ref!r}") from exc
        met = M.custom(fn, d, reversible=bool(p.get("reversible", False)))
    else:
        raise ConfigError(f"metric.kind: unknown metric {kind!r}")
    if met.dim != d:
        raise ConfigError(f"metric has dimension {met.dim}, domain needs {d}")
    if "scale" in p:
        met = M.scaled(met, float(p["scale"]))
    return met


def build_volume(cfg, d) -> V.VolumeDescriptor:
    v = _get(cfg, "volume", "config")
    kind = v.get("kind", "riemannian")
    if kind == "explicit":
        if "phi_expr" not in v:
            raise ConfigError("volume.phi_expr is required for an explicit volume")
        return V.explicit(expression(v["phi_expr"], d, "volume.phi_expr"))
    if kind == "lebesgue":
        return V.lebesgue()
    if kind == "riemannian":
        return V.riemannian()
    if kind in ("busemann_hausdorff", "bh"):
        return V.busemann_hausdorff()
    raise ConfigError(f"volume.kind: unknown volume {kind!r}")


def solver_options(cfg) -> spectral.SolverOptions:
    s = _get(cfg, "solver", "config")
    known = {"tol", "max_outer", "seed", "damping", "n_starts", "n_directions"}
    bad = set(s) - known
    if bad:
        raise ConfigError(f"solver: unknown fields {sorted(bad)}")
    try:
        return spectral.SolverOptions(tol_lambda=float(s.get("tol", 1e-8)),
                                      max_outer=int(s.get("max_outer", 200)),
                                      damping=float(s.get("damping", 1.0)),
                                      seed=int(s.get("seed", 0)),
                                      n_directions=int(s.get("n_directions", 8)),
                                      n_starts=int(s.get("n_starts", 4)))
    except FinslerError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def stages(cfg, override=None):
    req = override if override is not None else cfg.get("stages", ["all"])
    if isinstance(req, str):
        req = [req]
    out = set()
    for s in req:
        if s == "all":
            out.update(CORE_STAGES)
            out.update(k for k in _get(cfg, "checks", "config") if k in STAGE_ORDER)
        elif s in STAGE_ORDER:
            out.add(s)
        else:
            raise ConfigError(f"stages: unknown stage {s!r}")
    if "bounds" in out:
        out.update(("scan", "diameter"))
    return [s for s in STAGE_ORDER if s in out]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


# -- running -------------------------------------------------------------------

@dataclass
class Experiment:
    """Everything built from a config, plus stage results as they accrue."""

    cfg: dict
    spec: domain.DomainSpec
    mesh: domain.MeshChart
    volume: V.VolumeDescriptor
    results: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    eigenfield: Optional[np.ndarray] = None
    fields: dict = field(default_factory=dict)

    @property
    def metric(self):
        return self.spec.metric


def prepare(cfg) -> Experiment:
    spec = build_domain(cfg)
    d = AMBIENT_DIM[spec.kind]
    vol = build_volume(cfg, d)
    solver_options(cfg)  # fail on a bad solver block before any stage runs
    res = cfg["domain"].get("resolution", {"circle": 512, "flat_torus": 64, "sphere": 4}[spec.kind])
    try:
        mesh = domain.build_mesh(spec, int(res))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain.resolution: invalid value {res!r}") from exc
    except FinslerError as exc:
        raise ConfigError(f"domain.resolution: {exc}") from exc
    return Experiment(cfg, spec, mesh, vol)


def _scan(ex):
    s = _get(ex.cfg, "scan", "config")
    Ns = [_n_value(v, "scan.N_list") for v in s.get("N_list", [])]
    sc = B.curvature_scan(ex.metric, ex.volume, ex.mesh, int(s.get("directions_per_vertex", 32)), Ns)
    ex.results["scan_obj"] = sc
    return asdict(sc)


def _diameter(ex):
    d = _get(ex.cfg, "domain", "config")
    mesh = ex.mesh
    if "diameter_resolution" in d:
        mesh = domain.build_mesh(ex.spec, int(d["diameter_resolution"]))
    w = domain.diameter_witness(mesh, ex.metric, d.get("ring"))
    ex.results["diameter_value"] = w.value
    return {"value": w.value, "source": mesh.vertices[w.source].tolist(),
            "target": mesh.vertices[w.target].tolist(), "resolution": mesh.resolution}


def _eigen(ex):
    res = spectral.first_eigenpair(ex.metric, ex.mesh, ex.volume, solver_options(ex.cfg),
                                   initial=ex.fields.get("initial"))
    ex.eigenfield = res.eigenfield
    ex.results["lambda1_value"] = res.lambda1
    return {"lambda1": res.lambda1, "residual": res.residual,
            "relative_residual": res.relative_residual, "iterations": res.iterations,
            "history": res.history, "converged": res.converged, "start": res.start,
            "monotone_violations": res.monotone_violations,
            "runs": {k: {"lambda1": v["lambda1"], "iterations": v["iterations"],
                         "converged": v["converged"]} for k, v in res.runs.items()}}


def _bounds(ex):
    rep = B.theorem_bounds(ex.results["scan_obj"], ex.results["diameter_value"], ex.mesh.dim,
                           ex.results.get("lambda1_value"))
    ex.results["bounds_obj"] = rep
    return asdict(rep)


def _test_field(ex, spec, where):
    if "loaded" in ex.fields:
        return ex.fields["loaded"]
    fn = expression(spec.get("u_expr", "sin(x1)"), AMBIENT_DIM[ex.spec.kind], where)
    ex.fields["test"] = calculus.sample(ex.mesh, fn)
    return fn


def _bochner(ex):
    c = _get(ex.cfg, "checks", "config").get("bochner", {})
    n = ex.mesh.dim
    Ns = [_n_value(v, "checks.bochner.N_list") for v in c.get("N_list", [n, n + 1, 2 * n, "inf"])]
    u = _test_field(ex, c, "checks.bochner.u_expr")
    r = calculus.bochner_residual(ex.metric, ex.mesh, ex.volume, u, N=Ns)
    return {"max_equality_residual": r.max_residual(), "h": ex.mesh.h,
            "min_slack": {N: r.min_slack(N) for N in Ns},
            "masked_vertices": int(np.sum(~r.mask))}


def _trace(ex):
    c = _get(ex.cfg, "checks", "config").get("trace", {})
    u = _test_field(ex, c, "checks.trace.u_expr")
    r = calculus.trace_identity_residual(ex.metric, ex.mesh, ex.volume, u)
    return {"max_residual": float(np.nanmax(r)), "h": ex.mesh.h,
            "masked_vertices": int(np.sum(np.isnan(r)))}


def _volume_comparison(ex):
    c = _get(ex.cfg, "checks", "config").get("volume_comparison", {})
    for key in ("k", "Lam", "r_grid"):
        if key not in c:
            raise ConfigError(f"checks.volume_comparison.{key} is required")
    x = c.get("x", 0)
    sc = ex.results.get("scan_obj")
    rep = B.volume_comparison_check(ex.mesh, ex.metric, ex.volume, x, float(c["k"]),
                                    float(c["Lam"]), c["r_grid"], scan=sc)
    return asdict(rep)


def _zhong_yang(ex):
    c = _get(ex.cfg, "checks", "config").get("zhong_yang", {})
    out = []
    for a in c.get("a_grid", [0, 0.25, 0.5, 0.75, 0.9]):
        for dl in c.get("delta_grid", [0.001, 0.01, 0.1]):
            val = B.zhong_yang_integral(float(a), float(dl))
            out.append({"a_eps": a, "delta": dl, "integral": val, "lower_bound": math.pi - 2 * dl,
                        "holds": val >= math.pi - 2 * dl})
    return {"grid": out, "all_hold": all(r["holds"] for r in out)}


RUNNERS = {"scan": _scan, "diameter": _diameter, "eigen": _eigen, "bounds": _bounds,
           "bochner": _bochner, "trace": _trace, "volume_comparison": _volume_comparison,
           "zhong_yang": _zhong_yang}


def execute(ex: Experiment, stage_list) -> Experiment:
    """Run stages in order; a failing stage is recorded and its dependants skipped."""
    needs = {"bounds": ("scan", "diameter")}
    failed = set()
    for st in stage_list:
        if any(dep in failed for dep in needs.get(st, ())):
            failed.add(st)
            ex.errors.append({"stage": st, "type": "Skipped", "message": "a prerequisite stage failed"})
            continue
        try:
            ex.results[st] = RUNNERS[st](ex)
        except FinslerError as exc:
            failed.add(st)
            ex.errors.append({"stage": st, "type": type(exc).__name__, "message": str(exc)})
    return ex


def exit_code(ex: Experiment) -> int:
    if ex.errors:
        return EXIT_ERROR
    rep = ex.results.get("bounds_obj")
    if rep is not None and rep.any_violated:
        return EXIT_VIOLATED
    return EXIT_OK


# -- reports -------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy to python, non-finite floats to strings, keys to str."""
    if isinstance(obj, dict):
        return {(_key(k)): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _key(k):
    if isinstance(k, float):
        return "inf" if math.isinf(k) else format(k, "g")
    return str(k)


def report(ex: Experiment) -> dict:
    res = {k: v for k, v in ex.results.items() if k in STAGE_ORDER}
    return _clean({
        "case": ex.cfg.get("name", ex.spec.kind),
        "config": ex.cfg,
        "mesh": {"kind": ex.mesh.kind, "resolution": ex.mesh.resolution,
                 "n_vertices": ex.mesh.n_vertices, "n_cells": ex.mesh.n_cells, "h": ex.mesh.h},
        "results": res,
        "errors": ex.errors,
        "exit_code": exit_code(ex),
    })


def report_csv(ex: Experiment) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "theorem", "bound", "lambda1", "diameter", "verdict"])
    rep = ex.results.get("bounds_obj")
    if rep is not None:
        case = ex.cfg.get("name", ex.spec.kind)
        lam = "" if rep.lambda1_estimate is None else repr(rep.lambda1_estimate)
        for key in rep.applicable_theorems:
            w.writerow([case, key, repr(rep.bound_values[key]), lam, repr(rep.diameter_estimate),
                        rep.verdicts[key]])
    return buf.getvalue()


def write_reports(ex: Experiment, out_dir) -> tuple:
    os.makedirs(out_dir, exist_ok=True)
    jp, cp = os.path.join(out_dir, "report.json"), os.path.join(out_dir, "report.csv")
    with open(jp, "w") as fh:
        json.dump(report(ex), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(cp, "w") as fh:
        fh.write(report_csv(ex))
    return jp, cp


def run_experiment(config, out_dir=".", stage_override=None, initial_field=None) -> tuple:
    """Run a config (path or dict) and write its reports.

    Returns (exit code, Experiment or None, report paths). Config errors
    give exit code 1 and an error-only report.
    """
    try:
        cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else dict(config)
        ex = prepare(cfg)
        st = stages(cfg, stage_override)
        if initial_field is not None:
            u0 = np.asarray(initial_field, dtype=float)
            if u0.shape != (ex.mesh.n_vertices,):
                raise ConfigError(f"loaded field has {u0.size} values, mesh has {ex.mesh.n_vertices} vertices")
            ex.fields["initial"] = ex.fields["loaded"] = u0
    except FinslerError as exc:
        os.makedirs(out_dir, exist_ok=True)
        jp = os.path.join(out_dir, "report.json")
        with open(jp, "w") as fh:
            json.dump({"errors": [{"stage": "config", "type": type(exc).__name__, "message": str(exc)}],
                       "exit_code": EXIT_ERROR}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return EXIT_ERROR, None, (jp,)
    execute(ex, st)
    return exit_code(ex), ex, write_reports(ex, out_dir)
