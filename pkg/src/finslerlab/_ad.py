"""Forward-mode AD kernels shared by the metric, curvature and FEM layers.

Every geometric quantity is a nested ``jax.jacfwd`` of the norm function
``norm_fn(params, X, Y)``. Kernels are compiled once per (norm function,
chart function, log-density function) triple; metric parameters travel as
traced arrays so metrics of the same family share compiled code.

Batches are evaluated in fixed-size padded chunks so each kernel compiles
at most once per bucket size.
"""

from __future__ import annotations

import functools

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

_BUCKETS = (32, 4096)


def identity_chart(pc, x):
    return x


class Batched:
    """jit(vmap(fn)) evaluated over numpy batches in padded chunks.

    ``fn(shared, *per_sample)``; ``shared`` is broadcast, the remaining
    arguments carry a leading batch axis.
    """

    def __init__(self, fn):
        self._fn = fn
        self._compiled = {}

    def _get(self, nb):
        if nb not in self._compiled:
            in_axes = (None,) + (0,) * nb
            self._compiled[nb] = jax.jit(jax.vmap(self._fn, in_axes=in_axes))
        return self._compiled[nb]

    def __call__(self, shared, *arrays):
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        total = arrays[0].shape[0]
        fn = self._get(len(arrays))
        if total == 0:
            raise ValueError("empty batch")
        bucket = next((b for b in _BUCKETS if b >= total), _BUCKETS[-1])
        outs = []
        for start in range(0, total, bucket):
            chunk = [a[start:start + bucket] for a in arrays]
            m = chunk[0].shape[0]
            if m < bucket:
                chunk = [np.concatenate([c, np.repeat(c[:1], bucket - m, axis=0)]) for c in chunk]
            res = fn(shared, *chunk)
            outs.append(jax.tree_util.tree_map(lambda r, m=m: np.array(r)[:m], res))
        if len(outs) == 1:
            return outs[0]
        return jax.tree_util.tree_map(lambda *rs: np.concatenate(rs, axis=0), *outs)


def _solve(a, b):
    return jnp.linalg.solve(a, b)


class PointKernels:
    """Pointwise geometry of ``F(x, y) = norm(X(x), J(x) y)`` in a chart."""

    def __init__(self, norm_fn, chart_fn, logdens_fn=None):
        self.norm_fn = norm_fn
        self.chart_fn = chart_fn
        self.logdens_fn = logdens_fn
        self._cache = {}
        self._build()

    def _build(self):
        norm_fn, chart_fn, logdens_fn = self.norm_fn, self.chart_fn, self.logdens_fn

        def F(pm, pc, x, y):
            X = chart_fn(pc, x)
            J = jax.jacfwd(chart_fn, argnums=1)(pc, x)
            return norm_fn(pm, X, J @ y)

        def F2(pm, pc, x, y):
            return F(pm, pc, x, y) ** 2

        def g(pm, pc, x, y):
            return 0.5 * jax.hessian(F2, argnums=3)(pm, pc, x, y)

        def grad_half(pm, pc, x, y):
            return 0.5 * jax.grad(F2, argnums=3)(pm, pc, x, y)

        def cartan(pm, pc, x, y):
            return 0.5 * jax.jacfwd(g, argnums=3)(pm, pc, x, y)

        def spray(pm, pc, x, y):
            gy = g(pm, pc, x, y)
            dyx = jax.jacfwd(jax.grad(F2, argnums=3), argnums=2)(pm, pc, x, y)
            dx = jax.grad(F2, argnums=2)(pm, pc, x, y)
            return 0.25 * _solve(gy, dyx @ y - dx)

        def nonlinear(pm, pc, x, y):
            return jax.jacfwd(spray, argnums=3)(pm, pc, x, y)

        def chern(pm, pc, x, y):
            gy = g(pm, pc, x, y)
            N = nonlinear(pm, pc, x, y)
            dgx = jax.jacfwd(g, argnums=2)(pm, pc, x, y)
            dgy = jax.jacfwd(g, argnums=3)(pm, pc, x, y)
            dg = dgx - jnp.einsum("mk,ljm->ljk", N, dgy)
            lower = 0.5 * (dg + jnp.transpose(dg, (0, 2, 1)) - jnp.transpose(dg, (2, 0, 1)))
            return jnp.einsum("il,ljk->ijk", jnp.linalg.inv(gy), lower)

        def riemann(pm, pc, x, y):
            Gv = spray(pm, pc, x, y)
            Gx = jax.jacfwd(spray, argnums=2)(pm, pc, x, y)
            Gy = jax.jacfwd(spray, argnums=3)(pm, pc, x, y)
            Gxy = jax.jacfwd(jax.jacfwd(spray, argnums=2), argnums=3)(pm, pc, x, y)
            Gyy = jax.jacfwd(jax.jacfwd(spray, argnums=3), argnums=3)(pm, pc, x, y)
            return (2.0 * Gx
                    - jnp.einsum("j,ijk->ik", y, Gxy)
                    + 2.0 * jnp.einsum("j,ijk->ik", Gv, Gyy)
                    - Gy @ Gy)

        def ricci(pm, pc, x, y):
            return jnp.trace(riemann(pm, pc, x, y)) / F2(pm, pc, x, y)

        def flag(pm, pc, x, y, v):
            R = riemann(pm, pc, x, y)
            gy = g(pm, pc, x, y)
            num = (gy @ (R @ v)) @ v
            den = F2(pm, pc, x, y) * (v @ gy @ v) - (y @ gy @ v) ** 2
            return jnp.stack([num, den])

        self.F = F
        self.g_fn = g
        self.spray_fn = spray
        fns = {
            "F": F, "g": g, "grad_half": grad_half, "cartan": cartan,
            "spray": spray, "nonlinear": nonlinear, "chern": chern,
            "riemann": riemann, "ricci": ricci, "flag": flag,
            "newton": lambda pm, pc, x, y: (grad_half(pm, pc, x, y), g(pm, pc, x, y)),
        }

        if logdens_fn is not None:
            def phi(pm, pc, x):
                X = chart_fn(pc, x)
                J = jax.jacfwd(chart_fn, argnums=1)(pc, x)
                return logdens_fn(pm, X, J)

            def tau(pm, pc, x, y):
                return 0.5 * jnp.linalg.slogdet(g(pm, pc, x, y))[1] - phi(pm, pc, x)

            def s_curv(pm, pc, x, y):
                tx = jax.grad(tau, argnums=2)(pm, pc, x, y)
                ty = jax.grad(tau, argnums=3)(pm, pc, x, y)
                return tx @ y - 2.0 * spray(pm, pc, x, y) @ ty

            def s_dot(pm, pc, x, y):
                sx = jax.grad(s_curv, argnums=2)(pm, pc, x, y)
                sy = jax.grad(s_curv, argnums=3)(pm, pc, x, y)
                return (sx @ y - 2.0 * spray(pm, pc, x, y) @ sy) / F2(pm, pc, x, y)

            def weighted(pm, pc, x, y):
                # Ric, S, S-dot and F in one pass for scans.
                return jnp.stack([ricci(pm, pc, x, y), s_curv(pm, pc, x, y),
                                  s_dot(pm, pc, x, y), F(pm, pc, x, y)])

            def phi_grad(pm, pc, x):
                return jax.grad(phi, argnums=2)(pm, pc, x)

            fns.update({"phi": phi, "phi_grad": phi_grad, "tau": tau, "s": s_curv, "s_dot": s_dot,
                        "weighted": weighted})
        self._fns = fns

    def fn(self, name):
        """The unbatched, unjitted kernel ``fn(params, chart_params, x, y, ...)``."""
        return self._fns[name]

    def batched(self, name):
        if name not in self._cache:
            fn = self._fns[name]
            self._cache[name] = Batched(lambda shared, *a, fn=fn: fn(shared, *a))
        return self._cache[name]

    def __call__(self, name, pm, pc, *arrays):
        """Evaluate kernel ``name`` on batched (pc, x, y, ...) arrays."""
        return self.batched(name)(pm, pc, *arrays)


@functools.lru_cache(maxsize=None)
def point_kernels(norm_fn, chart_fn=identity_chart, logdens_fn=None):
    return PointKernels(norm_fn, chart_fn, logdens_fn)


class LocalKernels:
    """Framed evaluation ``f(w) = norm(X, E w)`` used on mesh cells."""

    def __init__(self, norm_fn, logdens_fn=None):
        def f(pm, X, E, w):
            return norm_fn(pm, X, E @ w)

        def newton(pm, X, E, w):
            half = lambda v: 0.5 * f(pm, X, E, v) ** 2
            return jax.grad(half)(w), jax.hessian(half)(w)

        self.norm = Batched(lambda pm, X, E, w: f(pm, X, E, w))
        self.newton = Batched(newton)
        self.logdens = None
        if logdens_fn is not None:
            self.logdens = Batched(lambda pm, X, E: logdens_fn(pm, X, E))


@functools.lru_cache(maxsize=None)
def local_kernels(norm_fn, logdens_fn=None):
    return LocalKernels(norm_fn, logdens_fn)


def legendre_newton(newton, shared, extra, xi, y0=None, tol=1e-10, max_iter=50):
    """Solve ``grad(F^2/2)(y) = xi`` for a batch by damped Newton.

    ``newton(shared, *extra, y)`` returns (gradient, Hessian) of F^2/2.
    Rows with ``xi == 0`` return the zero vector. Returns (y, residual).
    """
    xi = np.asarray(xi, dtype=float)
    B, n = xi.shape
    scale = np.linalg.norm(xi, axis=1)
    active = scale > 0.0
    y = np.zeros_like(xi)
    res_out = np.zeros(B)
    if not active.any():
        return y, res_out
    ex = [np.asarray(e)[active] for e in extra]
    target = xi[active]
    sc = scale[active]
    yk = target.copy() if y0 is None else np.asarray(y0, dtype=float)[active].copy()
    grad, hess = newton(shared, *ex, yk)
    res = np.linalg.norm(grad - target, axis=1)
    for _ in range(max_iter):
        todo = res > tol * sc
        if not todo.any():
            break
        step = np.linalg.solve(hess[todo], (target[todo] - grad[todo])[..., None])[..., 0]
        t = np.ones(todo.sum())
        ex_t = [e[todo] for e in ex]
        base = yk[todo]
        for _ls in range(30):
            trial = base + t[:, None] * step
            g_t, h_t = newton(shared, *ex_t, trial)
            r_t = np.linalg.norm(g_t - target[todo], axis=1)
            ok = (r_t < res[todo]) | (t < 1e-6)
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        idx = np.nonzero(todo)[0]
        yk[idx] = trial
        grad[idx] = g_t
        hess[idx] = h_t
        res[idx] = r_t
    y[active] = yk
    res_out[active] = res / sc
    return y, res_out


class Chart:
    """A chart map ``fn(params, x) -> X`` with its parameter vector."""

    def __init__(self, fn, params):
        self.fn = fn
        self.params = np.asarray(params, dtype=float)

    def __call__(self, x):
        return np.asarray(self.fn(jnp.asarray(self.params), jnp.asarray(x, dtype=float)))

