"""Spray, Chern coefficients, flag/Ricci curvature and S-curvature quantities.

Everything is computed from coordinate formulas in the spray G^i, with x- and
y-derivatives taken by forward-mode AD. An optional :class:`Chart` lets a
metric given in embedding coordinates (e.g. on the sphere) be evaluated in
local coordinates; ``x`` and ``y`` are then chart coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._ad import Chart, identity_chart, point_kernels
from .errors import (DegenerateDirectionError, DegenerateFlagError, InvalidInputError,
                     InvalidParameterError, InvalidVolumeError)
from .metric import MetricDescriptor
from .volume import VolumeDescriptor


@dataclass
class SprayData:
    G: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray


@dataclass
class CurvatureSample:
    """Pointwise curvature scalars at (x, y).

    ``psi`` is the distortion sampled at (x, y): along the geodesic through
    (x, y) it is the function whose first two derivatives give S and S-dot.
    """

    x: np.ndarray
    y: np.ndarray
    K: Optional[float]
    ric: float
    tau: float
    s: float
    s_dot: float
    ric_N: float
    N: float
    psi: float


def _setup(metric, x, y, chart, volume=None):
    dim = metric.dim if chart is None else None
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if dim is not None and (x.shape != (dim,) or y.shape != (dim,)):
        raise InvalidInputError(f"x and y must be {dim}-vectors")
    if x.shape != y.shape or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("x and y must be finite vectors of equal length")
    if not np.any(y):
        raise DegenerateDirectionError("direction y must be nonzero")
    fn = identity_chart if chart is None else chart.fn
    pc = np.zeros((1, 0)) if chart is None else chart.params[None]
    logdens = None if volume is None else volume.bind(metric)
    ker = point_kernels(metric.norm_fn, fn, logdens)
    return ker, pc, x[None], y[None]


def _call(metric, name, x, y, chart=None, volume=None, extra=()):
    ker, pc, xb, yb = _setup(metric, x, y, chart, volume)
    return ker(name, metric.params, pc, xb, yb, *[np.asarray(e, dtype=float)[None] for e in extra])


def spray_coefficients(metric: MetricDescriptor, x, y, chart: Optional[Chart] = None) -> SprayData:
    """G^i, N^j_i = dG^j/dy^i (stored as N[j, i]) and Chern Gamma^i_jk."""
    G = np.asarray(_call(metric, "spray", x, y, chart)[0])
    N = np.asarray(_call(metric, "nonlinear", x, y, chart)[0])
    Gamma = np.asarray(_call(metric, "chern", x, y, chart)[0])
    return SprayData(G, N, Gamma)


def riemann_operator(metric, x, y, chart=None) -> np.ndarray:
    """Spray curvature R^i_k(x, y)."""
    return np.asarray(_call(metric, "riemann", x, y, chart)[0])


def flag_curvature(metric: MetricDescriptor, x, y, V, chart: Optional[Chart] = None) -> float:
    V = np.atleast_1d(np.asarray(V, dtype=float))
    num, den = _call(metric, "flag", x, y, chart, extra=(V,))[0]
    g = np.asarray(_call(metric, "g", x, y, chart)[0])
    F2 = float(np.asarray(y, dtype=float) @ g @ np.asarray(y, dtype=float))
    if den <= 1e-12 * F2 * float(V @ g @ V):
        raise DegenerateFlagError("flagpole and transverse edge are parallel")
    return float(num / den)


def ricci(metric: MetricDescriptor, x, y, chart: Optional[Chart] = None) -> float:
    return float(_call(metric, "ricci", x, y, chart)[0])


def _check_volume(metric, volume, x, y, chart):
    ker, pc, xb, yb = _setup(metric, x, y, chart, volume)
    phi = float(ker.batched("phi")(metric.params, pc, xb)[0])
    if not math.isfinite(phi):
        raise InvalidVolumeError("volume density is not positive at x")


def distortion(metric: MetricDescriptor, volume: VolumeDescriptor, x, y,
               chart: Optional[Chart] = None) -> float:
    """tau = ln sqrt(det g(x, y)) - Phi(x)."""
    _check_volume(metric, volume, x, y, chart)
    return float(_call(metric, "tau", x, y, chart, volume)[0])


def s_curvature(metric: MetricDescriptor, volume: VolumeDescriptor, x, y,
                chart: Optional[Chart] = None) -> float:
    _check_volume(metric, volume, x, y, chart)
    return float(_call(metric, "s", x, y, chart, volume)[0])


def s_dot(metric: MetricDescriptor, volume: VolumeDescriptor, x, y,
          chart: Optional[Chart] = None) -> float:
    _check_volume(metric, volume, x, y, chart)
    return float(_call(metric, "s_dot", x, y, chart, volume)[0])


def combine_weighted(ric, s, sdot, F, N, n):
    """Ric_N from its ingredients; N = inf gives Ric + S-dot."""
    _check_N(N, n)
    if math.isinf(N):
        return ric + sdot
    return ric + sdot - s ** 2 / ((N - n) * F ** 2)


def _check_N(N, n):
    if not (N > n):
        raise InvalidParameterError(f"N must lie in (n, inf], got N={N} with n={n}")


def weighted_ricci(metric: MetricDescriptor, volume: VolumeDescriptor, x, y, N: float,
                   chart: Optional[Chart] = None) -> float:
    n = len(np.atleast_1d(x))
    _check_N(N, n)
    _check_volume(metric, volume, x, y, chart)
    ric, s, sd, F = _call(metric, "weighted", x, y, chart, volume)[0]
    return float(combine_weighted(ric, s, sd, F, N, n))


def curvature_sample(metric: MetricDescriptor, volume: VolumeDescriptor, x, y, V=None,
                     N: float = math.inf, chart: Optional[Chart] = None) -> CurvatureSample:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _check_N(N, x.shape[0])
    _check_volume(metric, volume, x, y, chart)
    ric, s, sd, F = (float(v) for v in _call(metric, "weighted", x, y, chart, volume)[0])
    tau = float(_call(metric, "tau", x, y, chart, volume)[0])
    K = None if V is None else flag_curvature(metric, x, y, V, chart)
    return CurvatureSample(x, y, K, ric, tau, s, sd, combine_weighted(ric, s, sd, F, N, x.shape[0]),
                           N, tau)


def weighted_batch(metric: MetricDescriptor, volume: VolumeDescriptor, xs, ys,
                   chart_fn=None, chart_params=None):
    """Columns (Ric, S, S-dot, F) for a batch of (x, y) samples.

    ``chart_params`` is one parameter row per sample when a chart is used.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    fn = identity_chart if chart_fn is None else chart_fn
    pc = np.zeros((xs.shape[0], 0)) if chart_params is None else np.asarray(chart_params, dtype=float)
    ker = point_kernels(metric.norm_fn, fn, volume.bind(metric))
    return np.asarray(ker("weighted", metric.params, pc, xs, ys))
