"""Curvature scans, eigenvalue lower bounds and the auxiliary quantities
used to check them.

Bound families (keys of :attr:`BoundsReport.bound_values`):

``ric_N_sdot_cap[N]``
    Ric_N >= (n-1)k > 0 and S-dot <= (N-n)(n-1)k/(N-1) give
    lambda1 >= (n-1)Nk/(N-1), equality only at diameter sqrt((N-1)/(n-1)) pi/sqrt(k).
``ric_N_compact[N]``
    Ric_N >= (n-1)k > 0 alone on a closed manifold gives the same bound; at
    equality the diameter is at least sqrt((N-1)/(n-1)) pi/sqrt(k).
``s_zero_ric_positive``
    S = 0 and Ric >= (n-1)k > 0 give lambda1 >= nk, equality diameter pi/sqrt(k).
``ric_inf_diameter``
    Ric_inf >= 0 gives lambda1 >= pi^2/d^2.
``constant_s_diameter``
    S = (n+1)cF and Ric >= 0 give lambda1 >= pi^2/d^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .curvature import combine_weighted, weighted_batch
from .domain import MeshChart, ball_volume, comparison_volume, vertex_charts
from .errors import (HypothesisUnmetError, InvalidInputError, InvalidParameterError,
                     NumericFailureError, OutOfDomainError)
from .metric import MetricDescriptor
from .volume import VolumeDescriptor

RIC_SIGN_TOL = 1e-6
S_ZERO_TOL = 1e-9
EQUALITY_RTOL = 0.01
VIOLATION_RTOL = 0.02
GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass
class CurvatureScan:
    """Extremes of curvature quantities over (vertex, direction) samples.

    Flag curvature extremes are those of Ric for n = 2 (one flag per
    direction) and ``None`` for n = 1.
    """

    n: int
    inf_ric: float
    inf_ric_over_nminus1: Optional[float]
    inf_ric_N: dict
    inf_ric_inf: float
    sup_s_dot: float
    sup_abs_s: float
    s_identically_zero: bool
    s_constant_multiple_of_F: bool
    s_constant: float
    s_tol: float
    inf_flag: Optional[float]
    sup_flag: Optional[float]
    mean_ric: float
    sample_count: int
    witnesses: dict = field(default_factory=dict)


def _directions(n, D, nv):
    """Per-vertex unit directions: rotated uniform circles with golden-ratio offsets."""
    if n == 1:
        return np.broadcast_to(np.array([[1.0], [-1.0]]), (nv, 2, 1)).copy()
    off = (np.arange(nv) * GOLDEN) % 1.0
    t = 2 * np.pi * (np.arange(D)[None, :] + off[:, None]) / D
    return np.stack([np.cos(t), np.sin(t)], -1)


def _witness(mesh, pc, flat, ys, D, value):
    vi, j = divmod(int(flat), D)
    y = ys[vi, j]
    if mesh.kind == "sphere":
        p = pc[vi]
        y_amb = p[9] * (y[0] * p[3:6] + y[1] * p[6:9])
    else:
        y_amb = y
    return {"value": float(value), "vertex": vi,
            "x": [float(v) for v in mesh.vertices[vi]], "y": [float(v) for v in y_amb]}


def curvature_scan(metric: MetricDescriptor, volume: VolumeDescriptor, mesh: MeshChart,
                   direction_samples: int = 32, N_list: Sequence[float] = ()) -> CurvatureScan:
    """Scan Ric, Ric_N, S and S-dot over mesh vertices times unit directions."""
    if direction_samples < 8:
        raise InvalidInputError("direction_samples must be at least 8")
    n = mesh.dim
    for N in N_list:
        if not N > n:
            raise InvalidParameterError(f"N must lie in (n, inf], got N={N} with n={n}")
    chart_fn, pc = vertex_charts(mesh)
    nv = mesh.n_vertices
    ys = _directions(n, direction_samples, nv)
    D = ys.shape[1]
    if mesh.kind == "sphere":
        xs = np.zeros((nv * D, 2))
    else:
        xs = np.repeat(mesh.vertices, D, axis=0)
    cols = weighted_batch(metric, volume, xs, ys.reshape(nv * D, n),
                          chart_fn=chart_fn, chart_params=np.repeat(pc, D, axis=0))
    ric, s, sd, F = cols.T
    if not np.all(np.isfinite(cols)):
        bad = int(np.argmin(np.all(np.isfinite(cols), axis=1)))
        w = _witness(mesh, pc, bad, ys, D, math.nan)
        raise NumericFailureError(f"non-finite curvature at vertex {w['vertex']}, x={w['x']}, y={w['y']}")

    def wit(arr, pick):
        i = int(pick(arr))
        return _witness(mesh, pc, i, ys, D, arr[i])

    s_abs = np.abs(s)
    s_tol = S_ZERO_TOL / mesh.h
    c = s / ((n + 1) * F)
    c_fit = float(np.median(c))
    ric_inf = ric + sd
    witnesses = {"inf_ric": wit(ric, np.argmin), "inf_ric_inf": wit(ric_inf, np.argmin),
                 "sup_s_dot": wit(sd, np.argmax), "sup_abs_s": wit(s_abs, np.argmax)}
    inf_N = {}
    for N in N_list:
        rN = np.asarray(combine_weighted(ric, s, sd, F, float(N), n))
        inf_N[float(N)] = float(rN.min())
        witnesses[f"inf_ric_N[{_fmt_N(N)}]"] = wit(rN, np.argmin)
    inf_ric = float(ric.min())
    return CurvatureScan(
        n=n,
        inf_ric=inf_ric,
        inf_ric_over_nminus1=inf_ric / (n - 1) if n > 1 else None,
        inf_ric_N=inf_N,
        inf_ric_inf=float(ric_inf.min()),
        sup_s_dot=float(sd.max()),
        sup_abs_s=float(s_abs.max()),
        s_identically_zero=bool(s_abs.max() <= s_tol),
        s_constant_multiple_of_F=bool(np.max(np.abs(c - c_fit)) <= s_tol),
        s_constant=c_fit,
        s_tol=s_tol,
        inf_flag=inf_ric if n == 2 else None,
        sup_flag=float(ric.max()) if n == 2 else None,
        mean_ric=float(ric.mean()),
        sample_count=int(ric.size),
        witnesses=witnesses,
    )


def _fmt_N(N):
    return "inf" if math.isinf(N) else format(float(N), "g")


# -- bounds ------------------------------------------------------------------

@dataclass
class BoundsReport:
    applicable_theorems: list
    bound_values: dict
    lambda1_estimate: Optional[float]
    diameter_estimate: float
    equality_diameter_predictions: dict
    verdicts: dict
    relative_margins: dict
    notes: dict = field(default_factory=dict)

    @property
    def any_violated(self):
        return any(v == "violated" for v in self.verdicts.values())


def verdict(lambda1: Optional[float], bound: float):
    """Classify lambda1 against a lower bound by relative margin."""
    if lambda1 is None:
        return "not-evaluated", None
    rel = (lambda1 - bound) / abs(bound) if bound != 0 else lambda1
    if abs(rel) <= EQUALITY_RTOL:
        return "satisfied-at-equality", rel
    if rel > 0:
        return "satisfied", rel
    if rel >= -VIOLATION_RTOL:
        return "violated-within-tolerance", rel
    return "violated", rel


def theorem_bounds(scan: CurvatureScan, diameter: float, n: int,
                   lambda1: Optional[float] = None) -> BoundsReport:
    """Evaluate every lower bound whose hypotheses the scan certifies."""
    if not diameter > 0:
        raise InvalidInputError("diameter must be positive")
    if n != scan.n:
        raise InvalidInputError("n does not match the scan")
    applicable, bounds, diam, notes = [], {}, {}, {}
    if n >= 2:
        for N, inf_rN in sorted(scan.inf_ric_N.items()):
            if math.isinf(N):
                continue
            k = inf_rN / (n - 1)
            if k <= 0:
                continue
            b = (n - 1) * N * k / (N - 1)
            d_eq = math.sqrt((N - 1) / (n - 1)) * math.pi / math.sqrt(k)
            cap = (N - n) * (n - 1) * k / (N - 1)
            tag = _fmt_N(N)
            if scan.sup_s_dot <= cap + RIC_SIGN_TOL:
                key = f"ric_N_sdot_cap[{tag}]"
                applicable.append(key)
                bounds[key] = b
                diam[key] = d_eq
                notes[key] = {"k": k, "N": N, "s_dot_cap": cap}
            key = f"ric_N_compact[{tag}]"
            applicable.append(key)
            bounds[key] = b
            diam[key] = d_eq
            notes[key] = {"k": k, "N": N, "diameter_at_equality": "at least"}
        k = scan.inf_ric / (n - 1)
        if scan.s_identically_zero and k > RIC_SIGN_TOL:
            key = "s_zero_ric_positive"
            applicable.append(key)
            bounds[key] = n * k
            diam[key] = math.pi / math.sqrt(k)
            notes[key] = {"k": k}
    if scan.inf_ric_inf >= -RIC_SIGN_TOL:
        key = "ric_inf_diameter"
        applicable.append(key)
        bounds[key] = math.pi ** 2 / diameter ** 2
    if scan.s_constant_multiple_of_F and scan.inf_ric >= -RIC_SIGN_TOL:
        key = "constant_s_diameter"
        applicable.append(key)
        bounds[key] = math.pi ** 2 / diameter ** 2
        notes[key] = {"c": scan.s_constant}
    verdicts, margins = {}, {}
    for key in applicable:
        verdicts[key], margins[key] = verdict(lambda1, bounds[key])
    return BoundsReport(applicable, bounds, lambda1, float(diameter), diam, verdicts, margins, notes)


# -- auxiliary function psi and its integral ---------------------------------

# Taylor coefficients of psi(pi/2 - t) in t
_PSI_SERIES = np.array([1, -8 / (3 * math.pi), 1 / 4, -16 / (45 * math.pi), 1 / 24,
                        -16 / (315 * math.pi), 17 / 2880, -32 / (4725 * math.pi), 31 / 40320,
                        -16 / (18711 * math.pi), 691 / 7257600])
_SERIES_SWITCH = 2e-2


@dataclass
class ZhongYangParams:
    a_eps: float
    delta: float

    @classmethod
    def from_k(cls, k: float, eps: float) -> "ZhongYangParams":
        """a_eps = (1-k)/((1+k)(1+eps)), sin(pi/2 - delta) = 1/(1+eps)."""
        if not 0 < k <= 1:
            raise InvalidParameterError("k must lie in (0, 1]")
        if not eps > 0:
            raise InvalidParameterError("eps must be positive")
        return cls((1 - k) / ((1 + k) * (1 + eps)), math.pi / 2 - math.asin(1 / (1 + eps)))


def zhong_yang_psi(theta):
    """((4/pi)(theta + cos sin) - 2 sin)/cos^2 on [-pi/2, pi/2], odd, psi(+-pi/2) = +-1."""
    th = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(th)) or np.any(np.abs(th) > math.pi / 2):
        raise OutOfDomainError("theta must lie in [-pi/2, pi/2]")
    a = np.abs(th)
    t = math.pi / 2 - a
    near = t < _SERIES_SWITCH
    out = np.empty_like(a)
    tn = t[near]
    out[near] = np.polynomial.polynomial.polyval(tn, _PSI_SERIES)
    af = a[~near]
    c, s = np.cos(af), np.sin(af)
    out[~near] = ((4 / math.pi) * (af + c * s) - 2 * s) / c ** 2
    out = np.sign(th) * out
    out = np.where(th == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def zhong_yang_integral(a_eps: float, delta: float, epsrel: float = 1e-10) -> float:
    """int over [-pi/2 + delta, pi/2 - delta] of (1 + a psi)^(-1/2)."""
    if not abs(a_eps) < 1:
        raise OutOfDomainError("|a_eps| must be < 1")
    if not 0 <= delta < math.pi / 2:
        raise OutOfDomainError("delta must lie in [0, pi/2)")
    lo, hi = -math.pi / 2 + delta, math.pi / 2 - delta
    # psi is increasing with range within [-1, 1], so the worst point is an end
    worst = min(1 + a_eps * zhong_yang_psi(lo), 1 + a_eps * zhong_yang_psi(hi))
    if worst <= 1e-12:
        raise OutOfDomainError("integrand is singular on the interval")
    if a_eps == 0:
        return hi - lo

    def f(th):
        return (1 + a_eps * zhong_yang_psi(th)) ** -0.5

    val, err = integrate.quad(f, lo, hi, epsabs=0, epsrel=epsrel, limit=200)
    if err > 1e-8 * abs(val):
        raise NumericFailureError("quadrature error above 1e-8", residual=err)
    if val < hi - lo - 1e-8:
        raise NumericFailureError(f"integral {val} fell below pi - 2 delta", residual=hi - lo - val)
    return float(val)


# -- volume comparison --------------------------------------------------------

@dataclass
class VolumeComparisonReport:
    r_grid: list
    ball_volumes: list
    comparison_volumes: list
    ratios: list
    non_increasing: bool
    strictly_decreasing: bool
    max_deviation_from_one: float
    tolerance: float = VIOLATION_RTOL


def volume_comparison_check(mesh: MeshChart, metric: Optional[MetricDescriptor], volume: VolumeDescriptor,
                            x, k: float, Lam: float, r_grid, scan: Optional[CurvatureScan] = None,
                            ring=None) -> VolumeComparisonReport:
    """Ratios mu(B(x, r)) / V_{k,Lam,n}(r) along ``r_grid``.

    The hypotheses Ric >= (n-1)k and |S| <= Lam are certified by ``scan``
    (computed here when not given).
    """
    metric = metric or mesh.spec.metric
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size < 2 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise InvalidInputError("r_grid must be positive and strictly increasing")
    if scan is None:
        scan = curvature_scan(metric, volume, mesh, 16)
    n = mesh.dim
    failing = []
    if scan.inf_ric < (n - 1) * k - RIC_SIGN_TOL * max(1.0, abs(k)):
        failing.append(f"inf Ric = {scan.inf_ric:.6g} < (n-1)k = {(n - 1) * k:.6g}")
    if scan.sup_abs_s > Lam + scan.s_tol:
        failing.append(f"sup |S| = {scan.sup_abs_s:.6g} > Lam = {Lam:.6g}")
    if failing:
        raise HypothesisUnmetError("; ".join(failing))
    balls = [ball_volume(mesh, metric, volume, x, float(ri), ring) for ri in r]
    comps = [comparison_volume(k, Lam, n, float(ri)) for ri in r]
    ratios = np.array(balls) / np.array(comps)
    non_inc = bool(np.all(ratios[1:] <= ratios[:-1] * (1 + VIOLATION_RTOL)))
    strict = bool(np.all(np.diff(ratios) < 0))
    return VolumeComparisonReport([float(v) for v in r], balls, comps, [float(v) for v in ratios],
                                  non_inc, strict, float(np.max(np.abs(ratios - 1))))
