"""Volume forms d(mu) = exp(Phi) dx: explicit, Riemannian, Busemann-Hausdorff.

Densities are evaluated in a *frame*: at ambient point X with a linear map
E from local coordinates into the ambient tangent space. In a chart E is
the chart Jacobian; on a mesh cell it is the cell's orthonormal frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import jax.numpy as jnp
import numpy as np

from .errors import InvalidVolumeError, NumericFailureError
from .metric import MetricDescriptor, norm_batch

BH_DIRECTIONS = 256


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere in R^n."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def _directions(n: int, m: int = BH_DIRECTIONS):
    """Quadrature nodes and weights on S^{n-1}."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        t = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(t), np.sin(t)], 1), np.full(m, 2 * np.pi / m)
    if n == 3:
        z, wz = np.polynomial.legendre.leggauss(m // 4)
        p = 2 * np.pi * np.arange(m // 2) / (m // 2)
        Z, P = np.meshgrid(z, p, indexing="ij")
        r = np.sqrt(1 - Z ** 2)
        dirs = np.stack([r * np.cos(P), r * np.sin(P), Z], -1).reshape(-1, 3)
        w = np.outer(wz, np.full(p.size, 2 * np.pi / p.size)).ravel()
        return dirs, w
    raise InvalidVolumeError("Busemann-Hausdorff quadrature supports n <= 3")


@dataclass(frozen=True, eq=False)
class VolumeDescriptor:
    """``kind`` in {explicit, riemannian, busemann_hausdorff}.

    For ``explicit`` the log-density ``phi(X)`` is relative to the frame's
    Euclidean volume (sqrt det E^T E), so in a chart of a sphere it is a
    density against the round area.
    """

    kind: str
    phi: Optional[Callable] = None

    def bind(self, metric: MetricDescriptor) -> Callable:
        """Log-density function ``(params, X, E) -> Phi`` for ``metric``."""
        return _bind(self, metric)


def explicit(phi: Callable) -> VolumeDescriptor:
    """d(mu) = exp(phi(x)) dx; ``phi`` must be jax-traceable."""
    return VolumeDescriptor("explicit", phi)


def lebesgue() -> VolumeDescriptor:
    return VolumeDescriptor("explicit", _zero_phi)


def riemannian() -> VolumeDescriptor:
    return VolumeDescriptor("riemannian")


def busemann_hausdorff() -> VolumeDescriptor:
    return VolumeDescriptor("busemann_hausdorff")


def _zero_phi(x):
    return jnp.zeros(())


_BOUND = {}


def _logdet_frame(E):
    return 0.5 * jnp.linalg.slogdet(E.T @ E)[1]


def _bind(vol, metric):
    if vol.kind == "explicit":
        key = ("explicit", vol.phi)
    elif vol.kind == "riemannian":
        if metric.riemannian_fn is None:
            raise InvalidVolumeError("Riemannian volume needs a metric with a quadratic part")
        key = ("riemannian", metric.riemannian_fn)
    elif vol.kind == "busemann_hausdorff":
        key = ("bh", metric.norm_fn)
    else:
        raise InvalidVolumeError(f"unknown volume kind {vol.kind!r}")
    if key in _BOUND:
        return _BOUND[key]

    if vol.kind == "explicit":
        phi = vol.phi

        def logdens(pm, X, E):
            return phi(X) + _logdet_frame(E)
    elif vol.kind == "riemannian":
        a_fn = metric.riemannian_fn

        def logdens(pm, X, E):
            return 0.5 * jnp.linalg.slogdet(E.T @ a_fn(pm, X) @ E)[1]
    else:
        norm_fn = metric.norm_fn

        def logdens(pm, X, E):
            n = E.shape[1]
            dirs, w = _directions(n)
            F = jnp.stack([norm_fn(pm, X, E @ d) for d in dirs]) if n == 1 else \
                _vmapped_norm(norm_fn, pm, X, (E @ jnp.asarray(dirs).T).T)
            ball = jnp.sum(jnp.asarray(w) * F ** (-n)) / n
            return math.log(unit_ball_volume(n)) - jnp.log(ball)
    _BOUND[key] = logdens
    return logdens


def _vmapped_norm(norm_fn, pm, X, Ys):
    import jax
    return jax.vmap(lambda Y: norm_fn(pm, X, Y))(Ys)


def density(volume: VolumeDescriptor, metric: MetricDescriptor, x) -> float:
    """sigma(x) = exp(Phi(x)) in the metric's own coordinates."""
    x = jnp.asarray(np.atleast_1d(np.asarray(x, dtype=float)))
    val = float(jnp.exp(volume.bind(metric)(metric.params, x, jnp.eye(metric.dim))))
    if not val > 0 or not np.isfinite(val):
        raise InvalidVolumeError(f"volume density {val} is not positive")
    return val


def busemann_hausdorff_density(metric: MetricDescriptor, x, m: int = BH_DIRECTIONS,
                               rtol: float = 1e-10) -> float:
    """vol(unit Euclidean ball) / vol{y : F(x, y) < 1} by direction quadrature."""
    n = metric.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def ball(mm):
        dirs, w = _directions(n, mm)
        F = norm_batch(metric, np.broadcast_to(x, dirs.shape), dirs)
        return np.sum(w * F ** (-n)) / n

    b1, b2 = ball(m), ball(2 * m)
    if n > 1 and abs(b1 - b2) > rtol * abs(b2):
        raise NumericFailureError("Busemann-Hausdorff quadrature did not converge",
                                  residual=abs(b1 - b2) / abs(b2))
    return unit_ball_volume(n) / b2
