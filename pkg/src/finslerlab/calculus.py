"""Discrete operators on scalar fields: gradient, divergence, Laplacians, Hessian.

Two discretizations live here.

* A P1 finite-element space. Cell gradients du are constant, but the
  Legendre map is applied at every quadrature point because the metric
  varies inside a cell. The divergence is the weak one,
  int div(V) phi dmu = -int dphi(V) dmu, with the consistent mass matrix.
* Local polynomial reconstruction around vertices, used wherever second
  or third derivatives of a field are needed (Hessian, Bochner terms).
  Quantities are evaluated at vertices in that vertex's chart.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import jax
import jax.numpy as jnp
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from ._ad import identity_chart, legendre_newton, local_kernels, point_kernels
from .curvature import combine_weighted
from .domain import (MeshChart, _neighbors_within, gnomonic_chart, quadrature_density,
                     sphere_chart_params)
from .errors import (DegenerateReferenceError, InvalidInputError, MeshQualityError,
                     NumericFailureError)
from .metric import ZERO_GRADIENT_RTOL, MetricDescriptor
from .volume import VolumeDescriptor

LEGENDRE_TOL = 1e-13


# -- finite elements -----------------------------------------------------------

class FEMSpace:
    """P1 space on a mesh for a fixed (metric, volume) pair."""

    def __init__(self, mesh: MeshChart, metric: MetricDescriptor, volume: VolumeDescriptor):
        self.mesh, self.metric, self.volume = mesh, metric, volume
        X, w, bary = mesh.quadrature()
        C, Q, amb = X.shape
        n = mesh.dim
        self.C, self.Q, self.n = C, Q, n
        self.X = X
        self.Xf = X.reshape(-1, amb)
        self.Ef = np.repeat(mesh.frames, Q, axis=0)
        self.bary = bary
        self.wq = w * quadrature_density(mesh, metric, volume)
        self.G = mesh.hat_grads
        self.S = mesh.simplices
        self.kern = local_kernels(metric.norm_fn)
        k = n + 1
        local = np.einsum("cq,qa,qb->cab", self.wq, bary, bary)
        rows = np.repeat(self.S, k, axis=1).ravel()
        cols = np.tile(self.S, (1, k)).ravel()
        nv = mesh.n_vertices
        self.mass = coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsc()
        self.lumped = np.asarray(self.mass.sum(axis=1)).ravel()
        if np.any(self.lumped <= 0):
            raise MeshQualityError("mass matrix is singular")
        self._lu = splu(self.mass)
        self.total = float(self.lumped.sum())

    def cell_du(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh.n_vertices,) or not np.all(np.isfinite(u)):
            raise InvalidInputError("field must be finite with one value per vertex")
        return np.einsum("can,ca->cn", self.G, u[self.S])

    def newton(self, V):
        """(dF^2/2, g) at every quadrature point for vectors V (C, Q, n)."""
        grad, g = self.kern.newton(self.metric.params, self.Xf, self.Ef, V.reshape(-1, self.n))
        return grad.reshape(self.C, self.Q, self.n), g.reshape(self.C, self.Q, self.n, self.n)

    def legendre(self, du, tol=LEGENDRE_TOL):
        xi = np.repeat(du, self.Q, axis=0)
        y, res = legendre_newton(self.kern.newton, self.metric.params, [self.Xf, self.Ef], xi,
                                 tol=tol, max_iter=50)
        if np.any(res > max(tol, 1e-10)):
            bad = int(np.argmax(res)) // self.Q
            raise NumericFailureError(f"Legendre inversion failed on cell {bad}", residual=float(res.max()))
        return y.reshape(self.C, self.Q, self.n)

    def load(self, Vq):
        """b_i = -sum_q w sigma dphi_i(V_q)."""
        flux = np.einsum("cq,cqn->cn", self.wq, Vq)
        local = -np.einsum("can,cn->ca", self.G, flux)
        return np.bincount(self.S.ravel(), local.ravel(), minlength=self.mesh.n_vertices)

    def solve_mass(self, b):
        return self._lu.solve(b)

    def stiffness(self, Ainv):
        """K_ij = int dphi_i . A^{-1} dphi_j dmu, A^{-1} given per quadrature point."""
        k = self.n + 1
        local = np.einsum("cq,cam,cqmn,cbn->cab", self.wq, self.G, Ainv, self.G)
        rows = np.repeat(self.S, k, axis=1).ravel()
        cols = np.tile(self.S, (1, k)).ravel()
        nv = self.mesh.n_vertices
        return coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    def integrate(self, u):
        return float(self.lumped @ u)

    def zero_mean(self, u):
        return u - (self.lumped @ u) / self.total


def fem_space(mesh: MeshChart, metric: MetricDescriptor, volume: VolumeDescriptor) -> FEMSpace:
    key = ("fem", id(metric), id(volume))
    if key not in mesh._cache:
        mesh._cache[key] = (metric, volume, FEMSpace(mesh, metric, volume))
    return mesh._cache[key][2]


@dataclass
class GradientField:
    """Cell differentials ``du`` (C, n) in cell-frame coordinates and the
    Finsler gradient at each quadrature point (C, Q, n). ``mask`` marks
    the support M_u; vectors vanish off it."""

    du: np.ndarray
    vectors: np.ndarray
    mask: np.ndarray
    norms: np.ndarray

    @property
    def support(self):
        return np.nonzero(self.mask)[0]


def _mask(du, mesh=None, u=None):
    """Support of du: above ZERO_GRADIENT_RTOL of its max and, given the
    field, above the roundoff level of differencing its values."""
    s = np.linalg.norm(du, axis=1)
    top = s.max() if s.size else 0.0
    if top == 0.0:
        return np.zeros(len(s), dtype=bool)
    floor = 0.0 if u is None else ZERO_GRADIENT_RTOL * float(np.max(np.abs(u))) / mesh.h
    return s > max(ZERO_GRADIENT_RTOL * top, floor)


def gradient(metric: MetricDescriptor, mesh: MeshChart, u, volume: Optional[VolumeDescriptor] = None) -> GradientField:
    from .volume import lebesgue
    sp = fem_space(mesh, metric, volume or lebesgue())
    du = sp.cell_du(u)
    mask = _mask(du, mesh, u)
    du = np.where(mask[:, None], du, 0.0)
    V = sp.legendre(du)
    norms = np.sqrt(np.maximum(np.einsum("cn,cqn->cq", du, V), 0.0))
    return GradientField(du, V, mask, norms)


def divergence(mesh: MeshChart, volume: VolumeDescriptor, V, metric: Optional[MetricDescriptor] = None) -> np.ndarray:
    """Weak divergence of a cell vector field V ((C, n) or (C, Q, n), frame coordinates)."""
    metric = metric or mesh.spec.metric
    sp = fem_space(mesh, metric, volume)
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        V = np.repeat(V[:, None], sp.Q, axis=1)
    return sp.solve_mass(sp.load(V))


def finsler_laplacian(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u) -> np.ndarray:
    sp = fem_space(mesh, metric, volume)
    grad = gradient(metric, mesh, u, volume)
    return sp.solve_mass(sp.load(grad.vectors))


def reference_inverse(sp: FEMSpace, V, du=None):
    """g^{-1}(V) per quadrature point; zero where V vanishes."""
    V = np.asarray(V.vectors if isinstance(V, GradientField) else V, dtype=float)
    if V.ndim == 2:
        V = np.repeat(V[:, None], sp.Q, axis=1)
    zero = ~np.any(V != 0, axis=2)
    if du is not None:
        live = _mask(du)
        bad = np.nonzero(zero.any(axis=1) & live)[0]
        if bad.size:
            raise DegenerateReferenceError("reference vector vanishes on a cell where the field varies",
                                           cell=int(bad[0]))
    Vs = np.where(zero[..., None], 1.0, V)
    _, g = sp.newton(Vs)
    ginv = np.linalg.inv(g)
    return np.where(zero[..., None, None], 0.0, ginv)


def weighted_laplacian(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u, V) -> np.ndarray:
    """Delta^V u = div(g^{-1}(V) du), linear in u."""
    sp = fem_space(mesh, metric, volume)
    du = sp.cell_du(u)
    ginv = reference_inverse(sp, V, du)
    return sp.solve_mass(sp.load(np.einsum("cqmn,cn->cqm", ginv, du)))


# -- local reconstruction ----------------------------------------------------

def _monomials(n, degree):
    out = []
    for d in range(degree + 1):
        for a in itertools.product(range(d + 1), repeat=n):
            if sum(a) == d:
                out.append(a)
    return out


def _gnomonic_jac(pc, x):
    """Jacobian of the gnomonic chart, numpy, batched over x (B, 2)."""
    p, e1, e2, R = pc[:3], pc[3:6], pc[6:9], pc[9]
    E = np.stack([e1, e2], 1)
    v = p + x @ E.T
    r = np.linalg.norm(v, axis=1)
    vh = v / r[:, None]
    P = np.eye(3)[None] - vh[:, :, None] * vh[:, None, :]
    return R * (P @ E) / r[:, None, None]


class Reconstruction:
    """Least-squares polynomial fits of vertex data over graph rings.

    Every vertex gets its own chart (the global chart for torus and circle,
    a gnomonic chart centred at the vertex for the sphere); ``offsets``
    are the chart coordinates of its neighbours relative to the vertex.
    """

    def __init__(self, mesh: MeshChart, degree=4, ring=None):
        self.mesh = mesh
        n = mesh.dim
        ring = ring or 3
        nbrs = _neighbors_within(mesh, ring)
        lists = [[v] + nb for v, nb in enumerate(nbrs)]
        K = max(len(l) for l in lists)
        nv = mesh.n_vertices
        idx = np.array([l + [l[0]] * (K - len(l)) for l in lists])
        valid = np.array([[True] * len(l) + [False] * (K - len(l)) for l in lists])
        self.idx, self.valid, self.K, self.n = idx, valid, K, n
        Vx = mesh.vertices
        if mesh.kind == "sphere":
            R = mesh.spec.size[0]
            pcs = np.stack([sphere_chart_params(v, R) for v in Vx])
            q = Vx[idx]
            pd = np.einsum("vkd,vd->vk", q, pcs[:, :3])
            if np.any(pd[valid] <= 0):
                raise MeshQualityError("reconstruction ring too wide for gnomonic charts")
            off = np.stack([np.einsum("vkd,vd->vk", q, pcs[:, 3:6]),
                            np.einsum("vkd,vd->vk", q, pcs[:, 6:9])], -1) / pd[..., None]
            self.chart_fn, self.pc = gnomonic_chart, pcs
            self.x0 = np.zeros((nv, n))
            jp = np.zeros((nv, K, n, 3))
            self.jac0 = np.zeros((nv, 3, n))
            for v in range(nv):
                J = _gnomonic_jac(pcs[v], off[v])
                jp[v] = np.linalg.pinv(J)
                self.jac0[v] = _gnomonic_jac(pcs[v], np.zeros((1, n)))[0]
            self.jpinv = jp
        else:
            if mesh.kind == "flat_torus":
                L = np.array(mesh.spec.size)
            else:
                L = np.array([2 * math.pi * mesh.spec.size[0]])
            off = Vx[idx] - Vx[:, None, :]
            off = (off + L / 2) % L - L / 2
            self.chart_fn, self.pc = identity_chart, np.zeros((nv, 0))
            self.x0 = Vx.copy()
            self.jpinv = None
            self.jac0 = np.broadcast_to(np.eye(n), (nv, n, n)).copy()
        self.offsets = off
        self.monos = _monomials(n, degree)
        h = mesh.h
        self.h = h
        A = np.ones((nv, K, len(self.monos)))
        for j, a in enumerate(self.monos):
            for d in range(n):
                A[..., j] *= (off[..., d] / h) ** a[d]
        A = A * valid[..., None]
        if np.any(valid.sum(1) < len(self.monos)):
            raise MeshQualityError("too few neighbours for the requested reconstruction degree")
        pinv = np.linalg.pinv(A)
        scale = np.array([math.prod(math.factorial(k) for k in a) / h ** sum(a) for a in self.monos])
        # rows: derivative d^a f(0) for each monomial a
        self.ops = pinv * scale[None, :, None]
        self._pos = {a: j for j, a in enumerate(self.monos)}

    def _local(self, f):
        f = np.asarray(f, dtype=float)
        return f[self.idx] if f.ndim == 1 else f

    def derivative(self, f, alpha):
        """d^alpha of the fitted polynomial at each vertex; ``f`` is a vertex
        field or per-vertex neighbourhood data (V, K)."""
        j = self._pos[tuple(alpha)]
        return np.einsum("vk,vk->v", self.ops[:, j], self._local(f))

    def jets(self, f):
        """(df (V, n), d2f (V, n, n)) at every vertex in its chart."""
        n = self.n
        data = self._local(f)
        e = np.eye(n, dtype=int)
        d1 = np.stack([self.derivative(data, e[i]) for i in range(n)], 1)
        d2 = np.zeros((len(d1), n, n))
        for i in range(n):
            for j in range(n):
                d2[:, i, j] = self.derivative(data, e[i] + e[j])
        return d1, d2

    def gradient(self, f):
        return self.jets(f)[0]

    def vector_to_local(self, A):
        """Ambient vertex vectors (V, amb) as component data (V, K, n) in each
        vertex's chart at the neighbour positions."""
        A = np.asarray(A, dtype=float)
        An = A[self.idx]
        if self.jpinv is None:
            return An
        return np.einsum("vkna,vka->vkn", self.jpinv, An)


def reconstruction(mesh: MeshChart, degree=4, ring=None) -> Reconstruction:
    key = ("recon", degree, ring)
    if key not in mesh._cache:
        mesh._cache[key] = Reconstruction(mesh, degree, ring)
    return mesh._cache[key]


class _VertexGeometry:
    """Chart-level AD quantities at vertices and neighbour points."""

    def __init__(self, mesh, metric, volume, rec):
        self.rec, self.metric = rec, metric
        self.ker = point_kernels(metric.norm_fn, rec.chart_fn, volume.bind(metric))
        nv, K, n = rec.idx.shape[0], rec.K, rec.n
        pm = metric.params
        pts = (rec.x0[:, None, :] + rec.offsets).reshape(-1, n)
        pcs = np.repeat(rec.pc, K, axis=0)
        self.logsig_nb = self.ker.batched("phi")(pm, pcs, pts).reshape(nv, K)
        self.logsig0 = self.ker.batched("phi")(pm, rec.pc, rec.x0)
        self.dphi0 = self.ker.batched("phi_grad")(pm, rec.pc, rec.x0)

    def legendre(self, du):
        rec = self.rec
        newton = self.ker.batched("newton")
        y, res = legendre_newton(newton, self.metric.params, [rec.pc, rec.x0], du, tol=LEGENDRE_TOL)
        if np.any(res > 1e-10):
            raise NumericFailureError("Legendre inversion failed at a vertex", residual=float(res.max()))
        return y

    def __call__(self, name, V, *extra):
        return self.ker(name, self.metric.params, self.rec.pc, self.rec.x0, V, *extra)

    def divergence(self, A):
        """div_mu of an ambient vertex vector field, at vertices."""
        rec = self.rec
        comp = rec.vector_to_local(A)
        data = np.exp(self.logsig_nb - self.logsig0[:, None])[..., None] * comp
        e = np.eye(rec.n, dtype=int)
        return sum(rec.derivative(data[..., i], e[i]) for i in range(rec.n))


def _field_jets(mesh, rec, u):
    """Vertex values and jets of u, from a vertex array or a jax callable of the ambient point."""
    if callable(u):
        def local(pc, x):
            return u(rec.chart_fn(pc, x))
        f = jax.jit(jax.vmap(lambda pc, x: (local(pc, x), jax.grad(local, 1)(pc, x),
                                            jax.hessian(local, 1)(pc, x))))
        vals, d1, d2 = (np.asarray(a) for a in f(rec.pc, rec.x0))
        return vals, d1, d2
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise InvalidInputError("field must have one value per vertex")
    d1, d2 = rec.jets(u)
    return u, d1, d2


@dataclass
class HessianSample:
    """u_{a|b} in a g_{grad u}-orthonormal frame at one vertex."""

    H: np.ndarray
    vertex: int
    frame: np.ndarray
    coords: np.ndarray


def _hessian_parts(geom, du, d2u):
    V = geom.legendre(du)
    g = geom("g", V)
    Gam = geom("chern", V)
    Hc = d2u - np.einsum("vkij,vk->vij", Gam, du)
    return V, g, Hc


def _orthonormal_frame(g):
    """Columns e_a with e^T g e = I (Cholesky-based)."""
    L = np.linalg.cholesky(g)
    return np.linalg.inv(np.swapaxes(L, -1, -2))


def _setup(metric, mesh, volume, degree, ring):
    from .volume import lebesgue
    rec = reconstruction(mesh, degree, ring)
    volume = volume or lebesgue()
    key = ("vgeom", id(metric), id(volume), degree, ring)
    if key not in mesh._cache:
        mesh._cache[key] = (metric, volume, _VertexGeometry(mesh, metric, volume, rec))
    return rec, mesh._cache[key][2]


def hessian(metric: MetricDescriptor, mesh: MeshChart, u, vertex: int, degree=4, ring=None) -> HessianSample:
    """Hessian of u at a vertex, u_{i|j} = u_ij - Gamma^k_ij(grad u) u_k,
    expressed in a g_{grad u}-orthonormal frame."""
    rec, geom = _setup(metric, mesh, None, degree, ring)
    vals, du, d2u = _field_jets(mesh, rec, u)
    mask = _mask(du, mesh, vals)
    if not mask[vertex]:
        raise DegenerateReferenceError("vertex is outside the support of du", cell=int(vertex))
    sel = slice(vertex, vertex + 1)
    sub = _Sub(geom, sel)
    V, g, Hc = _hessian_parts(sub, du[sel], d2u[sel])
    P = _orthonormal_frame(g[0])
    return HessianSample(P.T @ Hc[0] @ P, int(vertex), P, Hc[0])


def hessian_field(metric: MetricDescriptor, mesh: MeshChart, u, degree=4, ring=None):
    """Hessians at every vertex in g_{grad u}-orthonormal frames.

    Returns (H (V, n, n), mask); H is zero off the support of du.
    """
    rec, geom = _setup(metric, mesh, None, degree, ring)
    vals, du, d2u = _field_jets(mesh, rec, u)
    mask = _mask(du, mesh, vals)
    Vs = np.where(mask[:, None], du, 1.0)
    _, g, Hc = _hessian_parts(geom, Vs, d2u)
    P = _orthonormal_frame(g)
    H = np.einsum("vai,vab,vbj->vij", P, Hc, P)
    return np.where(mask[:, None, None], H, 0.0), mask


class _Sub:
    """Restriction of a vertex geometry to a slice of vertices."""

    def __init__(self, geom, sel):
        self.geom, self.sel = geom, sel
        self.metric = geom.metric

    def legendre(self, du):
        rec = self.geom.rec
        newton = self.geom.ker.batched("newton")
        y, res = legendre_newton(newton, self.metric.params, [rec.pc[self.sel], rec.x0[self.sel]], du,
                                 tol=LEGENDRE_TOL)
        return y

    def __call__(self, name, V, *extra):
        rec = self.geom.rec
        return self.geom.ker(name, self.metric.params, rec.pc[self.sel], rec.x0[self.sel], V, *extra)


@dataclass
class VertexTerms:
    """Pointwise quantities at vertices used by the identity checks."""

    mask: np.ndarray
    grad: np.ndarray
    F2: np.ndarray
    hess_trace: np.ndarray
    hess_hs2: np.ndarray
    ric: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray


def _vertex_terms(metric, mesh, volume, vals, du, d2u, geom):
    mask = _mask(du, mesh, vals)
    V, g, Hc = _hessian_parts(geom, np.where(mask[:, None], du, 0.0), d2u)
    ginv = np.linalg.inv(g)
    A = ginv @ Hc
    tr = np.trace(A, axis1=1, axis2=2)
    hs2 = np.einsum("vij,vji->v", A, A)
    Vs = np.where(mask[:, None], V, du + 1.0)
    w = geom("weighted", Vs)
    return VertexTerms(mask, V, np.einsum("vi,vi->v", du, V), tr, hs2, w[:, 0], w[:, 1], w[:, 2])


def trace_identity_residual(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u,
                            vertex=None, degree=4, ring=None):
    """|Delta u - tr_{g_{grad u}} Hess u + S(grad u)| at vertices.

    Delta u is the finite-element Laplacian; the Hessian and S come from
    the local reconstruction, so the residual measures discretization error.
    Returns the array over all vertices (NaN off the support) or one value.
    """
    rec, geom = _setup(metric, mesh, volume, degree, ring)
    vals, du, d2u = _field_jets(mesh, rec, u)
    if vertex is not None and not _mask(du, mesh, vals)[vertex]:
        raise DegenerateReferenceError("vertex is outside the support of du", cell=int(vertex))
    lap = finsler_laplacian(metric, mesh, volume, vals)
    t = _vertex_terms(metric, mesh, volume, vals, du, d2u, geom)
    res = np.abs(lap - t.hess_trace + t.s)
    res = np.where(t.mask, res, np.nan)
    return res if vertex is None else float(res[vertex])


def vertex_laplacian(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u,
                     degree=4, ring=None) -> np.ndarray:
    """Pointwise Finsler-Laplacian at vertices from the local reconstruction.

    Unlike the weak P1 operator this converges pointwise on irregular
    meshes (the P1 Laplacian does not at valence-5 icosphere vertices).
    """
    rec, geom = _setup(metric, mesh, volume, degree, ring)
    vals, du, _ = _field_jets(mesh, rec, u)
    mask = _mask(du, mesh, vals)
    V = np.where(mask[:, None], geom.legendre(np.where(mask[:, None], du, 0.0)), 0.0)
    return geom.divergence(np.einsum("vdn,vn->vd", rec.jac0, V))


@dataclass
class BochnerResult:
    """Per-vertex Bochner residuals. ``slack[N]`` is the inequality slack for
    each requested N; ``mask`` is the support of du."""

    equality_residual: np.ndarray
    slack: dict
    mask: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    def max_residual(self, where=None):
        m = self.mask if where is None else (self.mask & where)
        return float(np.max(self.equality_residual[m]))

    def min_slack(self, N, where=None):
        m = self.mask if where is None else (self.mask & where)
        return float(np.min(self.slack[N][m]))


def bochner_residual(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u,
                     N=math.inf, degree=4, ring=None) -> BochnerResult:
    """Pointwise check of the Bochner identity and inequality at vertices.

    LHS = Delta^{grad u}(F(grad u)^2 / 2) - D(Delta u)(grad u), each piece
    built from reconstructed vertex fields; RHS uses exact Ric_inf, S and
    S-dot at (x, grad u) plus the Hilbert-Schmidt norm of the Hessian.
    ``N`` may be a number or a list; N = n is taken as the limit, valid
    only where S vanishes.
    """
    Ns = list(N) if isinstance(N, (list, tuple)) else [N]
    n = mesh.dim
    rec, geom = _setup(metric, mesh, volume, degree, ring)
    vals, du, d2u = _field_jets(mesh, rec, u)
    t = _vertex_terms(metric, mesh, volume, vals, du, d2u, geom)
    V = np.where(t.mask[:, None], t.grad, 0.0)
    amb = np.einsum("vdn,vn->vd", rec.jac0, V)
    lap = geom.divergence(amb)
    w = 0.5 * t.F2
    dw = rec.gradient(w)
    Vs = np.where(t.mask[:, None], V, 1.0)
    ginv = np.linalg.inv(geom("g", Vs))
    W = np.einsum("vij,vj->vi", ginv, dw) * t.mask[:, None]
    lap_w = geom.divergence(np.einsum("vdn,vn->vd", rec.jac0, W))
    dlap = rec.gradient(lap)
    lhs = lap_w - np.einsum("vi,vi->v", dlap, V)
    rhs = t.F2 * (t.ric + t.s_dot) + t.hess_hs2
    slack = {}
    for Nv in Ns:
        if Nv == n:
            # N = n: the S^2/(N - n) term is 0 where S = 0 and +inf elsewhere
            ok = np.abs(t.s) <= 1e-12 * np.sqrt(np.maximum(t.F2, 1e-300))
            ricN = np.where(ok, t.ric + t.s_dot, -np.inf)
        else:
            F = np.sqrt(np.where(t.mask, t.F2, 1.0))
            ricN = combine_weighted(t.ric, t.s, t.s_dot, F, Nv, n)
        with np.errstate(invalid="ignore"):
            sl = lhs - (t.F2 * ricN + (lap ** 2) / Nv)
        slack[Nv] = np.where(t.mask, sl, np.nan)
    res = np.where(t.mask, np.abs(lhs - rhs), np.nan)
    return BochnerResult(res, slack, t.mask, lhs, rhs)


# -- field I/O -----------------------------------------------------------------

def write_field(path, u) -> None:
    with open(path, "w") as fh:
        fh.write("".join(format(float(v), ".17g") + "\n" for v in np.asarray(u).ravel()))


def read_field(path) -> np.ndarray:
    with open(path) as fh:
        vals = [float(line) for line in fh if line.strip()]
    return np.array(vals)


def sample(mesh: MeshChart, fn: Callable) -> np.ndarray:
    """Vertex values of ``fn`` (a function of the ambient point)."""
    try:
        return np.asarray(jax.vmap(fn)(jnp.asarray(mesh.vertices)), dtype=float)
    except Exception:
        return np.array([float(fn(v)) for v in mesh.vertices])
