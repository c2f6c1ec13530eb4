"""Minkowski norms, fundamental and Cartan tensors, dual norm, Legendre map.

A :class:`MetricDescriptor` wraps a jax-traceable norm ``norm_fn(params, x, y)``.
All y-derivatives are nested forward-mode AD of F^2, so tensors are exact to
rounding. The library's own families (Euclidean, constant Riemannian,
constant Randers) pass their data as ``params`` so they share compiled
kernels; field-valued metrics close over user callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import jax.numpy as jnp
import numpy as np

from ._ad import legendre_newton, point_kernels
from .errors import (DegenerateDirectionError, InvalidInputError,
                     MetricViolationError, NumericFailureError)

ZERO_GRADIENT_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class MetricDescriptor:
    """A Finsler metric F(x, y) on an open set of R^n.

    ``kind`` is one of ``euclidean``, ``riemannian``, ``randers``, ``custom``.
    ``riemannian_fn(params, x)`` returns the quadratic part a_ij(x) (the
    whole metric for Riemannian kinds, alpha for Randers) and is ``None``
    for custom norms. ``oneform_fn`` is the Randers b(x).
    """

    kind: str
    dim: int
    norm_fn: Callable
    params: dict = field(default_factory=dict)
    riemannian_fn: Optional[Callable] = None
    oneform_fn: Optional[Callable] = None
    reversible: bool = False

    def __call__(self, x, y):
        return norm(self, x, y)

    @property
    def kernels(self):
        return point_kernels(self.norm_fn)


def _euclid_norm(pm, x, y):
    return jnp.sqrt(y @ y)


def _euclid_a(pm, x):
    return jnp.eye(x.shape[0])


def _riem_norm(pm, x, y):
    return jnp.sqrt(y @ pm["a"] @ y)


def _riem_a(pm, x):
    return pm["a"]


def _randers_norm(pm, x, y):
    return jnp.sqrt(y @ pm["a"] @ y) + pm["b"] @ y


def _randers_b(pm, x):
    return pm["b"]


def euclidean(n: int) -> MetricDescriptor:
    return MetricDescriptor("euclidean", int(n), _euclid_norm, {"n": jnp.zeros(0)},
                            riemannian_fn=_euclid_a, reversible=True)


def riemannian(a, n: Optional[int] = None) -> MetricDescriptor:
    """Riemannian metric from a constant SPD matrix or a callable ``x -> a(x)``."""
    if callable(a):
        if n is None:
            raise InvalidInputError("dimension n is required for a field-valued metric")
        a_fn = a

        def norm_fn(pm, x, y):
            return jnp.sqrt(y @ a_fn(x) @ y)

        return MetricDescriptor("riemannian", int(n), norm_fn, {"n": jnp.zeros(0)},
                                riemannian_fn=lambda pm, x: a_fn(x), reversible=True)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _check_spd(a)
    return MetricDescriptor("riemannian", a.shape[0], _riem_norm, {"a": jnp.asarray(a)},
                            riemannian_fn=_riem_a, reversible=True)


def randers(b, a=None, n: Optional[int] = None, sample_points=None) -> MetricDescriptor:
    """Randers metric F = sqrt(a(x)(y, y)) + b(x)(y).

    ``a`` and ``b`` are constants or callables of x; field-valued data is
    checked for |b|_alpha < 1 on ``sample_points`` (default: a 16^n grid of
    [0, 2*pi)^n).
    """
    if callable(b) or callable(a):
        if n is None:
            raise InvalidInputError("dimension n is required for field-valued Randers data")
        a_fn = a if callable(a) else (lambda x, _a=jnp.eye(n) if a is None else jnp.asarray(a, dtype=float): _a)
        b_fn = b if callable(b) else (lambda x, _b=jnp.asarray(b, dtype=float): _b)

        def norm_fn(pm, x, y):
            return jnp.sqrt(y @ a_fn(x) @ y) + b_fn(x) @ y

        metric = MetricDescriptor("randers", int(n), norm_fn, {"n": jnp.zeros(0)},
                                  riemannian_fn=lambda pm, x: a_fn(x),
                                  oneform_fn=lambda pm, x: b_fn(x))
        if sample_points is None:
            g1 = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
            sample_points = np.stack(np.meshgrid(*([g1] * n), indexing="ij"), -1).reshape(-1, n)
        worst = max(randers_alpha_norm(metric, p) for p in np.atleast_2d(sample_points))
        if worst >= 1.0:
            raise MetricViolationError(f"Randers one-form has |b|_alpha = {worst:.6g} >= 1")
        return metric
    b = np.atleast_1d(np.asarray(b, dtype=float))
    nn = b.shape[0]
    a = np.eye(nn) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    _check_spd(a)
    bn = float(np.sqrt(b @ np.linalg.solve(a, b)))
    if bn >= 1.0:
        raise MetricViolationError(f"Randers one-form has |b|_alpha = {bn:.6g} >= 1")
    return MetricDescriptor("randers", nn, _randers_norm,
                            {"a": jnp.asarray(a), "b": jnp.asarray(b)},
                            riemannian_fn=_riem_a, oneform_fn=_randers_b,
                            reversible=bool(np.all(b == 0)))


def custom(norm_fn: Callable, n: int, reversible: bool = False) -> MetricDescriptor:
    """User norm ``F(x, y)``; must be written with ``jax.numpy``."""
    return MetricDescriptor("custom", int(n), lambda pm, x, y: norm_fn(x, y),
                            {"n": jnp.zeros(0)}, reversible=reversible)


_SCALED = {}


def scaled(metric: MetricDescriptor, c: float) -> MetricDescriptor:
    """The metric c*F for c > 0 (its Riemannian part scales by c^2)."""
    if not c > 0:
        raise InvalidInputError("scale factor must be positive")
    inner, inner_a, inner_b = metric.norm_fn, metric.riemannian_fn, metric.oneform_fn
    key = (inner, inner_a, inner_b)
    if key not in _SCALED:
        def norm_fn(pm, x, y):
            return pm["c"] * inner(pm["inner"], x, y)

        a_fn = None if inner_a is None else (lambda pm, x: pm["c"] ** 2 * inner_a(pm["inner"], x))
        b_fn = None if inner_b is None else (lambda pm, x: pm["c"] * inner_b(pm["inner"], x))
        _SCALED[key] = (norm_fn, a_fn, b_fn)
    norm_fn, a_fn, b_fn = _SCALED[key]
    return MetricDescriptor(metric.kind, metric.dim, norm_fn,
                            {"inner": metric.params, "c": jnp.asarray(float(c))},
                            riemannian_fn=a_fn, oneform_fn=b_fn, reversible=metric.reversible)


def _check_spd(a):
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
        raise InvalidInputError("Riemannian matrix must be square and symmetric")
    if np.linalg.eigvalsh(a).min() <= 0:
        raise MetricViolationError("Riemannian matrix is not positive definite")


def randers_alpha_norm(metric: MetricDescriptor, x) -> float:
    """|b(x)|_alpha for a Randers metric."""
    x = jnp.asarray(x, dtype=float)
    a = np.asarray(metric.riemannian_fn(metric.params, x))
    b = np.asarray(metric.oneform_fn(metric.params, x))
    return float(np.sqrt(b @ np.linalg.solve(a, b)))


def _point(metric, x, y=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (metric.dim,) or not np.all(np.isfinite(x)):
        raise InvalidInputError(f"base point must be a finite {metric.dim}-vector")
    if y is None:
        return x
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (metric.dim,) or not np.all(np.isfinite(y)):
        raise InvalidInputError(f"vector must be a finite {metric.dim}-vector")
    return x, y


def _nonzero(y):
    if not np.any(y):
        raise DegenerateDirectionError("direction y must be nonzero")


def _eval(metric, name, x, y, *extra):
    pc = np.zeros((1, 0))
    return metric.kernels(name, metric.params, pc, x[None], y[None], *[e[None] for e in extra])


def _check_randers_at(metric, x):
    if metric.kind == "randers" and randers_alpha_norm(metric, x) >= 1.0:
        raise MetricViolationError("Randers one-form violates |b|_alpha < 1 at x")


def norm(metric: MetricDescriptor, x, y) -> float:
    """F(x, y); zero exactly when y = 0."""
    x, y = _point(metric, x, y)
    _check_randers_at(metric, x)
    if not np.any(y):
        return 0.0
    return float(_eval(metric, "F", x, y)[0])


def norm_batch(metric: MetricDescriptor, xs, ys) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    xs = np.broadcast_to(xs, ys.shape)
    return metric.kernels("F", metric.params, np.zeros((ys.shape[0], 0)), xs, ys)


@dataclass
class FundamentalTensor:
    g: np.ndarray
    x: np.ndarray
    y: np.ndarray


@dataclass
class CartanTensor:
    """C_ijk = (1/2) dg_ij/dy^k and A_ijk = F C_ijk."""

    C: np.ndarray
    A: np.ndarray


def fundamental_tensor(metric: MetricDescriptor, x, y) -> FundamentalTensor:
    x, y = _point(metric, x, y)
    _nonzero(y)
    g = np.asarray(_eval(metric, "g", x, y)[0])
    g = 0.5 * (g + g.T)
    if np.linalg.eigvalsh(g).min() <= 0:
        raise MetricViolationError("fundamental tensor is not positive definite")
    return FundamentalTensor(g, x, y)


def cartan_tensor(metric: MetricDescriptor, x, y) -> CartanTensor:
    x, y = _point(metric, x, y)
    _nonzero(y)
    C = np.asarray(_eval(metric, "cartan", x, y)[0])
    F = float(_eval(metric, "F", x, y)[0])
    return CartanTensor(C, F * C)


@dataclass
class Covector:
    components: np.ndarray
    x: np.ndarray


def _covector_components(metric, xi):
    comp = xi.components if isinstance(xi, Covector) else xi
    comp = np.atleast_1d(np.asarray(comp, dtype=float))
    if comp.shape != (metric.dim,) or not np.all(np.isfinite(comp)):
        raise InvalidInputError(f"covector must be a finite {metric.dim}-vector")
    return comp


def legendre_inverse_batch(metric: MetricDescriptor, xs, xis, tol=1e-10, max_iter=50):
    """Vectorized Legendre map L*(xi) at points ``xs``."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    xs = np.broadcast_to(np.atleast_2d(np.asarray(xs, dtype=float)), xis.shape)
    B = xis.shape[0]
    pc = np.zeros((B, 0))
    newton = metric.kernels.batched("newton")
    scale = np.linalg.norm(xis, axis=1)
    thresh = ZERO_GRADIENT_RTOL * max(scale.max(), 1e-300)
    xis = np.where((scale <= thresh)[:, None], 0.0, xis)
    y, res = legendre_newton(newton, metric.params, [pc, xs], xis, tol=tol, max_iter=max_iter)
    if np.any(res > tol):
        raise NumericFailureError("Legendre inversion did not converge", residual=float(res.max()))
    return y


def legendre_inverse(metric: MetricDescriptor, x, xi) -> np.ndarray:
    """L*(xi): the vector y with g_y(y, .) = xi; zero for xi = 0."""
    x = _point(metric, x)
    comp = _covector_components(metric, xi)
    if not np.any(comp):
        return np.zeros(metric.dim)
    return legendre_inverse_batch(metric, x[None], comp[None])[0]


def dual_norm(metric: MetricDescriptor, x, xi) -> float:
    """F*(x, xi) = sup over F(x, y) = 1 of xi(y), evaluated as F(L*(xi))."""
    x = _point(metric, x)
    comp = _covector_components(metric, xi)
    if not np.any(comp):
        return 0.0
    y = legendre_inverse(metric, x, comp)
    return norm(metric, x, y)


def dual_norm_batch(metric: MetricDescriptor, xs, xis) -> np.ndarray:
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    ys = legendre_inverse_batch(metric, xs, xis)
    out = np.zeros(xis.shape[0])
    nz = np.any(ys != 0, axis=1)
    if nz.any():
        xs_b = np.broadcast_to(np.atleast_2d(np.asarray(xs, dtype=float)), xis.shape)
        out[nz] = norm_batch(metric, xs_b[nz], ys[nz])
    return out
