"""Model manifolds: circle, flat torus and round sphere.

Each mesh stores, per cell, the vertex positions in *ambient* coordinates
(unwrapped across the periodic seam for the torus and circle, points of
R^3 for the sphere), an orthonormal frame E of the cell and the local
coordinates of its vertices in that frame. Downstream code only ever sees
(X, E) pairs, which is what lets one FEM code serve all three domains.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import jax
import jax.numpy as jnp
import numpy as np
from scipy import integrate
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ._ad import Chart, identity_chart, local_kernels, point_kernels
from .errors import (InvalidInputError, InvalidVolumeError, MeshQualityError, NumericFailureError,
                     OutOfDomainError, UnreachableError, UnsupportedDomainError)
from .metric import MetricDescriptor, euclidean, norm_batch
from .volume import VolumeDescriptor, sphere_area

GAUSS2 = (np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)]), np.array([0.5, 0.5]))
TRI3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI3_W = np.full(3, 1 / 3)
SEG2_BARY = np.stack([1 - GAUSS2[0], GAUSS2[0]], 1)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """``kind`` is circle (size = radius), flat_torus (size = periods) or sphere (radius).

    The metric lives in the chart coordinates for circle and torus
    (arc length and the periodic square) and in R^3 for the sphere.
    """

    kind: str
    size: tuple
    metric: MetricDescriptor

    @property
    def dim(self):
        return 1 if self.kind == "circle" else 2


def circle(radius=1.0, metric=None) -> DomainSpec:
    if not radius > 0:
        raise InvalidInputError("radius must be positive")
    return DomainSpec("circle", (float(radius),), metric or euclidean(1))


def flat_torus(L1=2 * math.pi, L2=2 * math.pi, metric=None) -> DomainSpec:
    if not (L1 > 0 and L2 > 0):
        raise InvalidInputError("torus periods must be positive")
    return DomainSpec("flat_torus", (float(L1), float(L2)), metric or euclidean(2))


def sphere(radius=1.0, metric=None) -> DomainSpec:
    if not radius > 0:
        raise InvalidInputError("radius must be positive")
    return DomainSpec("sphere", (float(radius),), metric or euclidean(3))


@dataclass(eq=False)
class MeshChart:
    spec: DomainSpec
    resolution: int
    vertices: np.ndarray
    simplices: np.ndarray
    identifications: list
    chart_map: Callable
    cell_points: np.ndarray
    frames: np.ndarray
    local: np.ndarray
    volumes: np.ndarray
    hat_grads: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self):
        return self.spec.kind

    @property
    def dim(self):
        return self.spec.dim

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.simplices.shape[0]

    @property
    def h(self):
        """Mean edge length of the cells."""
        P = self.cell_points
        k = P.shape[1]
        lens = [np.linalg.norm(P[:, i] - P[:, j], axis=1) for i in range(k) for j in range(i + 1, k)]
        return float(np.mean(lens))

    def quadrature(self):
        """Quadrature points (C, Q, ambient) and weights (C, Q) including cell volume."""
        if "quad" not in self._cache:
            bary = SEG2_BARY if self.dim == 1 else TRI3_BARY
            w = GAUSS2[1] if self.dim == 1 else TRI3_W
            X = np.einsum("qa,cad->cqd", bary, self.cell_points)
            if self.kind == "sphere":
                X = self.spec.size[0] * X / np.linalg.norm(X, axis=2, keepdims=True)
            self._cache["quad"] = (X, self.volumes[:, None] * w[None, :], bary)
        return self._cache["quad"]

    def check_closed(self):
        """Every codim-1 face must be shared by exactly two cells."""
        faces = {}
        k = self.simplices.shape[1]
        for c, s in enumerate(self.simplices):
            for i in range(k):
                f = tuple(sorted(np.delete(s, i)))
                faces[f] = faces.get(f, 0) + 1
        bad = [f for f, m in faces.items() if m != 2]
        if bad:
            raise MeshQualityError(f"{len(bad)} faces are not shared by exactly two cells")
        return True

    def vertex_index(self, x) -> int:
        """Nearest vertex to a chart/ambient point ``x`` (or pass-through for an int)."""
        if isinstance(x, (int, np.integer)):
            return int(x)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        V = self.vertices
        if self.kind == "flat_torus":
            L = np.array(self.spec.size)
            d = (V - x + L / 2) % L - L / 2
        elif self.kind == "circle":
            L = 2 * math.pi * self.spec.size[0]
            d = (V - x + L / 2) % L - L / 2
        else:
            d = V - x
        return int(np.argmin(np.linalg.norm(d, axis=1)))


def _finish(spec, res, V, S, idents, cmap, P):
    """Frames, local coordinates, volumes and hat gradients for cells P (C, n+1, amb)."""
    n = spec.dim
    C = P.shape[0]
    if spec.kind == "sphere":
        e1 = P[:, 1] - P[:, 0]
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        e2 = np.cross(nrm, e1)
        E = np.stack([e1, e2], 2)
    else:
        E = np.broadcast_to(np.eye(n), (C, n, n)).copy()
    W = np.einsum("cdn,cad->can", E, P - P[:, :1])
    B = W[:, 1:]
    det = np.linalg.det(B)
    vol = np.abs(det) / math.factorial(n)
    if np.any(vol <= 1e-12 * vol.mean()):
        raise MeshQualityError("degenerate simplex in mesh")
    Binv = np.linalg.inv(B)
    G = np.zeros((C, n + 1, n))
    G[:, 1:] = np.transpose(Binv, (0, 2, 1))
    G[:, 0] = -G[:, 1:].sum(1)
    return MeshChart(spec, res, V, S, idents, cmap, P, E, W, vol, G)


def _torus_mesh(spec, m):
    if m < 3:
        raise InvalidInputError("torus resolution must be at least 3")
    L1, L2 = spec.size
    h1, h2 = L1 / m, L2 / m
    I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    V = np.stack([I.ravel() * h1, J.ravel() * h2], 1)
    cells, pts = [], []
    for i in range(m):
        for j in range(m):
            grid = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            for tri in ((0, 1, 2), (0, 2, 3)):
                ids = [grid[t] for t in tri]
                cells.append([(a % m) * m + (b % m) for a, b in ids])
                pts.append([[a * h1, b * h2] for a, b in ids])
    idents = [(i * m, (i, m)) for i in range(m)] + [(j, (m, j)) for j in range(m)] + [(0, (m, m))]

    def cmap(x, L1=L1, L2=L2):
        x = np.atleast_2d(x)
        t1, t2 = 2 * np.pi * x[:, 0] / L1, 2 * np.pi * x[:, 1] / L2
        return np.stack([L1 / (2 * np.pi) * np.cos(t1), L1 / (2 * np.pi) * np.sin(t1),
                         L2 / (2 * np.pi) * np.cos(t2), L2 / (2 * np.pi) * np.sin(t2)], 1)

    return _finish(spec, m, V, np.array(cells), idents, cmap, np.array(pts, dtype=float))


def _circle_mesh(spec, m):
    if m < 3:
        raise InvalidInputError("circle resolution must be at least 3")
    r = spec.size[0]
    h = 2 * math.pi * r / m
    V = (np.arange(m) * h)[:, None]
    S = np.stack([np.arange(m), (np.arange(m) + 1) % m], 1)
    P = np.stack([np.arange(m) * h, (np.arange(m) + 1) * h], 1)[:, :, None]

    def cmap(s, r=r):
        s = np.atleast_2d(s)[:, 0] / r
        return np.stack([r * np.cos(s), r * np.sin(s)], 1)

    return _finish(spec, m, V, S, [(0, (m,))], cmap, P)


def icosphere(level: int):
    """Unit icosphere: 10*4^level + 2 vertices, outward-oriented triangles."""
    t = (1 + math.sqrt(5)) / 2
    V = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    V = [list(np.array(v) / np.linalg.norm(v)) for v in V]
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    for _ in range(level):
        mid = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                p = np.add(V[a], V[b])
                V.append(list(p / np.linalg.norm(p)))
                mid[key] = len(V) - 1
            return mid[key]

        F2 = []
        for a, b, c in F:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            F2 += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        F = F2
    V, F = np.array(V), np.array(F)
    P = V[F]
    flip = np.einsum("ij,ij->i", np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), P.mean(1)) < 0
    F[flip] = F[flip][:, [0, 2, 1]]
    return V, F


def _sphere_mesh(spec, level):
    if level < 0:
        raise InvalidInputError("sphere resolution must be >= 0")
    R = spec.size[0]
    V, F = icosphere(level)
    V = R * V
    return _finish(spec, level, V, F, [], lambda x: np.atleast_2d(x), V[F])


def build_mesh(spec: DomainSpec, resolution: int) -> MeshChart:
    """Closed simplicial mesh of ``spec``.

    circle: ``resolution`` vertices; flat torus: resolution x resolution
    grid, two triangles per square; sphere: icosphere of that subdivision
    level. Torus and circle meshes nest under doubling of the resolution.
    """
    resolution = int(resolution)
    if spec.kind == "circle":
        return _circle_mesh(spec, resolution)
    if spec.kind == "flat_torus":
        return _torus_mesh(spec, resolution)
    if spec.kind == "sphere":
        return _sphere_mesh(spec, resolution)
    raise UnsupportedDomainError(f"unsupported domain kind {spec.kind!r}")


# -- sphere charts -----------------------------------------------------------

def gnomonic_chart(pc, x):
    """R * normalize(p + x1 e1 + x2 e2) with pc = [p, e1, e2, R]."""
    v = pc[0:3] + x[0] * pc[3:6] + x[1] * pc[6:9]
    return pc[9] * v / jnp.sqrt(v @ v)


def tangent_frame(p, hint=None):
    """Orthonormal (e1, e2) tangent to the sphere at ``p``."""
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    if hint is None:
        hint = np.eye(3)[np.argmin(np.abs(p))]
    e1 = hint - (hint @ p) * p
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(p, e1)


def sphere_chart_params(X, R=1.0):
    """Gnomonic chart parameters centered at the sphere point ``X``."""
    p = np.asarray(X, dtype=float) / np.linalg.norm(X)
    e1, e2 = tangent_frame(p)
    return np.concatenate([p, e1, e2, [R]])


def sphere_chart(X, R=1.0) -> Chart:
    return Chart(gnomonic_chart, sphere_chart_params(X, R))


def vertex_charts(mesh: MeshChart):
    """(chart_fn, params per vertex) for evaluating chart quantities at vertices."""
    if mesh.kind == "sphere":
        R = mesh.spec.size[0]
        return gnomonic_chart, np.stack([sphere_chart_params(v, R) for v in mesh.vertices])
    return identity_chart, np.zeros((mesh.n_vertices, 0))


# -- geodesics ---------------------------------------------------------------

@dataclass
class GeodesicPath:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    speed: np.ndarray


_GEO_CACHE = {}


def _geodesic_stepper(norm_fn, on_sphere):
    key = (norm_fn, on_sphere)
    if key in _GEO_CACHE:
        return _GEO_CACHE[key]
    chart_fn = gnomonic_chart if on_sphere else identity_chart
    ker = point_kernels(norm_fn, chart_fn)
    spray = ker.fn("spray")
    F = ker.fn("F")

    def rk4(pm, pc, x, v, dt):
        def acc(x, v):
            return -2.0 * spray(pm, pc, x, v)
        k1x, k1v = v, acc(x, v)
        k2x, k2v = v + 0.5 * dt * k1v, acc(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
        k3x, k3v = v + 0.5 * dt * k2v, acc(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
        k4x, k4v = v + dt * k3v, acc(x + dt * k3x, v + dt * k3v)
        return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
                v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))

    if on_sphere:
        def step(carry, _, pm, dt, R):
            X, V, hint = carry
            p = X / jnp.linalg.norm(X)
            e1 = hint - (hint @ p) * p
            e1 = e1 / jnp.linalg.norm(e1)
            e2 = jnp.cross(p, e1)
            pc = jnp.concatenate([p, e1, e2, jnp.array([R])])
            x0 = jnp.zeros(2)
            v0 = jnp.array([V @ e1, V @ e2]) / R
            x1, v1 = rk4(pm, pc, x0, v0, dt)
            X1 = gnomonic_chart(pc, x1)
            J = jax.jacfwd(gnomonic_chart, argnums=1)(pc, x1)
            V1 = J @ v1
            out = (X1, V1, F(pm, pc, x1, v1))
            return (X1, V1, e1), out

        @jax.jit
        def run(pm, X0, V0, hint, dt, R, steps_arr):
            body = lambda c, s: step(c, s, pm, dt, R)
            return jax.lax.scan(body, (X0, V0, hint), steps_arr)[1]
    else:
        def step(carry, _, pm, dt):
            x, v = carry
            x1, v1 = rk4(pm, jnp.zeros(0), x, v, dt)
            return (x1, v1), (x1, v1, F(pm, jnp.zeros(0), x1, v1))

        @jax.jit
        def run(pm, x0, v0, dt, steps_arr):
            body = lambda c, s: step(c, s, pm, dt)
            return jax.lax.scan(body, (x0, v0), steps_arr)[1]

    _GEO_CACHE[key] = run
    return run


def integrate_geodesic(metric: MetricDescriptor, x0, y0, T: float, dt: float,
                       domain: Optional[DomainSpec] = None, max_drift: float = 1e-6) -> GeodesicPath:
    """Classical RK4 for x'' + 2 G(x, x') = 0.

    On a sphere domain, ``x0`` and ``y0`` are a point of the sphere and a
    tangent vector in R^3; the step is taken in a gnomonic chart
    re-centred at the current point so the chart never degenerates.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if not np.any(y0):
        raise InvalidInputError("initial velocity must be nonzero")
    if not (T > 0 and 0 < dt <= T / 10):
        raise InvalidInputError("need T > 0 and 0 < dt <= T/10")
    steps = int(round(T / dt))
    dt = T / steps
    on_sphere = domain is not None and domain.kind == "sphere"
    run = _geodesic_stepper(metric.norm_fn, on_sphere)
    if on_sphere:
        R = domain.size[0]
        x0 = R * x0 / np.linalg.norm(x0)
        y0 = y0 - (y0 @ x0) * x0 / R ** 2
        hint = tangent_frame(x0)[0]
        X, V, S = run(metric.params, x0, y0, hint, dt, R, jnp.zeros(steps))
        s0 = float(norm_batch(metric, x0[None], y0[None])[0])
    else:
        X, V, S = run(metric.params, x0, y0, dt, jnp.zeros(steps))
        s0 = float(norm_batch(metric, x0[None], y0[None])[0])
    X = np.vstack([x0, np.asarray(X)])
    V = np.vstack([y0, np.asarray(V)])
    S = np.concatenate([[s0], np.asarray(S)])
    if not np.all(np.isfinite(X)):
        raise NumericFailureError("geodesic integration produced non-finite state")
    drift = float(np.max(np.abs(S - s0)) / s0)
    if drift > max_drift:
        raise NumericFailureError("geodesic speed drift exceeds tolerance", residual=drift)
    return GeodesicPath(np.arange(steps + 1) * dt, X, V, S)


# -- distance ----------------------------------------------------------------

def _stencil(k):
    out = []
    for a in range(-k, k + 1):
        for b in range(-k, k + 1):
            if (a, b) != (0, 0) and math.gcd(abs(a), abs(b)) == 1:
                out.append((a, b))
    return out


def _neighbors_within(mesh, k):
    adj = [set() for _ in range(mesh.n_vertices)]
    for s in mesh.simplices:
        for i in s:
            adj[i].update(int(j) for j in s if j != i)
    out = []
    for v in range(mesh.n_vertices):
        seen = {v: 0}
        q = deque([v])
        while q:
            u = q.popleft()
            if seen[u] == k:
                continue
            for w in adj[u]:
                if w not in seen:
                    seen[w] = seen[u] + 1
                    q.append(w)
        out.append(sorted(w for w in seen if w != v))
    return out


DEFAULT_RING = {"flat_torus": 5, "sphere": 5, "circle": 1}


def default_ring(mesh: MeshChart) -> int:
    """Stencil radius used when none is given.

    On the torus the angular gaps of a fixed stencil leave an O(1)
    relative distance error, so the radius grows with the resolution.
    """
    if mesh.kind == "flat_torus":
        return max(DEFAULT_RING["flat_torus"], mesh.resolution // 8)
    return DEFAULT_RING[mesh.kind]


def edge_graph(mesh: MeshChart, metric: Optional[MetricDescriptor] = None, ring: Optional[int] = None):
    """Directed graph with edge weight = 2-point Gauss quadrature of F along the edge.

    Besides mesh edges, every vertex is linked to the vertices within
    ``ring`` steps (torus: the primitive lattice stencil of that radius)
    along straight chart segments (great-circle arcs on the sphere). The
    longer edges cut the direction bias of shortest paths on a graph.
    """
    metric = metric or mesh.spec.metric
    ring = default_ring(mesh) if ring is None else int(ring)
    key = ("graph", id(metric), ring)
    if key in mesh._cache:
        return mesh._cache[key][1]
    nv = mesh.n_vertices
    t, w = GAUSS2
    if mesh.kind == "sphere":
        nbrs = _neighbors_within(mesh, ring)
        src = np.concatenate([np.full(len(nb), i) for i, nb in enumerate(nbrs)])
        dst = np.concatenate([np.asarray(nb, dtype=int) for nb in nbrs])
        R = mesh.spec.size[0]
        p, q = mesh.vertices[src] / R, mesh.vertices[dst] / R
        om = np.arccos(np.clip(np.einsum("ij,ij->i", p, q), -1, 1))[:, None]
        so = np.sin(om)
        weights = 0.0
        for tg, wg in zip(t, w):
            X = R * (np.sin((1 - tg) * om) * p + np.sin(tg * om) * q) / so
            Vv = R * om * (-np.cos((1 - tg) * om) * p + np.cos(tg * om) * q) / so
            weights = weights + wg * norm_batch(metric, X, Vv)
    else:
        if mesh.kind == "flat_torus":
            m = mesh.resolution
            k = max(1, min(ring, (m - 1) // 2))
            offs = np.array(_stencil(k))
            hs = np.array(mesh.spec.size) / m
            I = np.arange(nv) // m
            J = np.arange(nv) % m
            src = np.repeat(np.arange(nv), len(offs))
            oo = np.tile(offs, (nv, 1))
            dst = ((I[src] + oo[:, 0]) % m) * m + (J[src] + oo[:, 1]) % m
            D = oo * hs
        else:
            m = mesh.resolution
            src = np.repeat(np.arange(m), 2)
            step = np.tile([1, -1], m)
            dst = (src + step) % m
            D = (step * (2 * math.pi * mesh.spec.size[0] / m))[:, None].astype(float)
        X0 = mesh.vertices[src]
        weights = 0.0
        for tg, wg in zip(t, w):
            weights = weights + wg * norm_batch(metric, X0 + tg * D, D)
    G = csr_matrix((weights, (src, dst)), shape=(nv, nv))
    mesh._cache[key] = (metric, G)
    return G


def distances_from(mesh: MeshChart, source, metric=None, ring=None, reverse=False) -> np.ndarray:
    """Forward distances d(source, .) (or d(., source) with ``reverse``)."""
    G = edge_graph(mesh, metric, ring)
    if reverse:
        G = G.T.tocsr()
    return dijkstra(G, directed=True, indices=mesh.vertex_index(source))


def forward_distance(mesh: MeshChart, metric: Optional[MetricDescriptor], p, q, ring=None) -> float:
    d = distances_from(mesh, p, metric, ring)[mesh.vertex_index(q)]
    if not np.isfinite(d):
        raise UnreachableError("target vertex is not reachable")
    return float(d)


@dataclass
class DiameterResult:
    """Vertex-pair diameter; graph paths overestimate length and vertex
    sampling underestimates the sup, so both biases are O(h)."""

    value: float
    source: int
    target: int


def diameter_witness(mesh: MeshChart, metric=None, ring=None, chunk=256) -> DiameterResult:
    G = edge_graph(mesh, metric, ring)
    best = (-1.0, 0, 0)
    for start in range(0, mesh.n_vertices, chunk):
        idx = np.arange(start, min(start + chunk, mesh.n_vertices))
        D = dijkstra(G, directed=True, indices=idx)
        if not np.all(np.isfinite(D)):
            raise UnreachableError("mesh graph is disconnected")
        flat = int(np.argmax(D))
        i, j = divmod(flat, mesh.n_vertices)
        if D[i, j] > best[0]:
            best = (float(D[i, j]), int(idx[i]), int(j))
    return DiameterResult(*best)


def diameter(mesh: MeshChart, metric=None, ring=None) -> float:
    return diameter_witness(mesh, metric, ring).value


# -- measure -----------------------------------------------------------------

def quadrature_density(mesh: MeshChart, metric: MetricDescriptor, volume: VolumeDescriptor):
    """sigma = exp(Phi) at the cell quadrature points, shape (C, Q)."""
    key = ("sigma", id(metric), id(volume))
    if key not in mesh._cache:
        X, w, _ = mesh.quadrature()
        C, Q, d = X.shape
        E = np.repeat(mesh.frames, Q, axis=0)
        lk = local_kernels(metric.norm_fn, volume.bind(metric))
        phi = lk.logdens(metric.params, X.reshape(-1, d), E).reshape(C, Q)
        sig = np.exp(phi)
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise InvalidVolumeError("volume density is not positive on the mesh")
        mesh._cache[key] = (metric, volume, sig)
    return mesh._cache[key][2]


def cell_measure(mesh, metric, volume) -> np.ndarray:
    X, w, _ = mesh.quadrature()
    return np.sum(w * quadrature_density(mesh, metric, volume), axis=1)


def total_volume(mesh, metric, volume) -> float:
    return float(np.sum(cell_measure(mesh, metric, volume)))


def _sublevel_fraction(d, r):
    """Fraction of a simplex where the linear interpolant of vertex values d is < r."""
    d = np.sort(d, axis=1)
    C, k = d.shape
    out = np.zeros(C)
    if k == 2:
        lo, hi = d[:, 0], d[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        out = np.clip((r - lo) / span, 0, 1)
        return np.where(hi > lo, out, (lo < r).astype(float))
    d0, d1, d2 = d[:, 0], d[:, 1], d[:, 2]
    full = r >= d2
    out[full] = 1.0
    a = (r > d0) & (r <= d1) & ~full
    den = (d1 - d0) * (d2 - d0)
    ok = a & (den > 0)
    out[ok] = (r - d0[ok]) ** 2 / den[ok]
    b = (r > d1) & (r < d2)
    den = (d2 - d0) * (d2 - d1)
    ok = b & (den > 0)
    out[ok] = 1 - (d2[ok] - r) ** 2 / den[ok]
    return out


def ball_volume(mesh: MeshChart, metric, volume: VolumeDescriptor, x, r: float, ring=None) -> float:
    """mu-measure of the forward ball {q : d(x, q) < r}."""
    if not r > 0:
        raise InvalidInputError("radius must be positive")
    metric = metric or mesh.spec.metric
    d = distances_from(mesh, x, metric, ring)
    frac = _sublevel_fraction(d[mesh.simplices], r)
    return float(np.sum(frac * cell_measure(mesh, metric, volume)))


def _s_k(k, t):
    if k > 0:
        return np.sin(math.sqrt(k) * t) / math.sqrt(k)
    if k < 0:
        return np.sinh(math.sqrt(-k) * t) / math.sqrt(-k)
    return t


def comparison_volume(k: float, Lam: float, n: int, r: float) -> float:
    """vol(S^{n-1}) * int_0^r e^{Lam t} s_k(t)^{n-1} dt."""
    if not r > 0 or Lam < 0:
        raise InvalidInputError("need r > 0 and Lam >= 0")
    if k > 0 and r > math.pi / math.sqrt(k) * (1 + 1e-14):
        raise OutOfDomainError("r exceeds pi/sqrt(k)")
    val, err = integrate.quad(lambda t: math.exp(Lam * t) * _s_k(k, t) ** (n - 1), 0, r,
                              epsabs=0, epsrel=1e-13, limit=200)
    return sphere_area(n) * val


# -- export ------------------------------------------------------------------

def _fmt(v):
    return format(float(v), ".17g")


def write_mesh(mesh: MeshChart, path) -> None:
    """Plain-text mesh: ``vertices``, ``simplices`` and ``identifications`` sections."""
    lines = ["vertices"]
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines.append("simplices")
    lines += [" ".join(str(int(i)) for i in s) for s in mesh.simplices]
    lines.append("identifications")
    lines += [f"{v} " + " ".join(str(int(i)) for i in grid) for v, grid in mesh.identifications]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh_sections(path) -> dict:
    out, cur = {}, None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line in ("vertices", "simplices", "identifications"):
                cur = out.setdefault(line, [])
            elif line:
                cur.append(line.split())
    return out
