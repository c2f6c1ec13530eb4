"""First nonzero eigenvalue of the Finsler-Laplacian on a closed mesh.

The nonlinear problem is solved by a fixed point on the linear weighted
Laplacians: given u_k, freeze the reference field V = grad u_k, take the
first nonzero eigenpair of (K_V, M) and move towards it. At a fixed point
K_{grad u} u = lambda M u, which is the weak form of Delta u = -lambda u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import eigsh

from .calculus import fem_space, gradient, reference_inverse, vertex_laplacian
from .domain import MeshChart
from .errors import InvalidInputError, MeshQualityError, NumericFailureError, ZeroFieldError
from .metric import MetricDescriptor
from .volume import VolumeDescriptor


@dataclass
class SolverOptions:
    tol_lambda: float = 1e-8
    max_outer: int = 200
    damping: float = 1.0
    seed: int = 0
    n_directions: int = 8
    n_starts: int = 4

    def __post_init__(self):
        if not self.tol_lambda > 0:
            raise InvalidInputError("tol_lambda must be positive")
        if self.max_outer < 1:
            raise InvalidInputError("max_outer must be >= 1")
        if not 0 < self.damping <= 1:
            raise InvalidInputError("damping must lie in (0, 1]")


@dataclass
class SpectralResult:
    """``residual`` is max |Delta u + lambda1 u| over vertices with the
    pointwise Laplacian; ``relative_residual`` divides by lambda1 max|u|."""

    lambda1: float
    eigenfield: np.ndarray
    residual: float
    iterations: int
    history: list
    relative_residual: float = 0.0
    converged: bool = True
    start: str = "initial"
    monotone_violations: list = field(default_factory=list)
    runs: dict = field(default_factory=dict)


def _project(sp, u):
    return sp.zero_mean(np.asarray(u, dtype=float))


def rayleigh_quotient(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor, u) -> float:
    """int F*(du)^2 dmu / int u^2 dmu after projecting u to zero mean."""
    sp = fem_space(mesh, metric, volume)
    u = _project(sp, u)
    den = float(u @ (sp.mass @ u))
    if den < 1e-14 * sp.total * max(np.max(np.abs(u)), 1e-300) ** 2 or den <= 0:
        raise ZeroFieldError("field is zero after removing its mean")
    grad = gradient(metric, mesh, u, volume)
    num = float(np.sum(sp.wq * np.einsum("cn,cqn->cq", grad.du, grad.vectors)))
    return num / den


def _average_inverse(sp, m):
    """Inverse of the direction-averaged fundamental tensor at each quadrature point."""
    t = 2 * np.pi * (np.arange(m) + 0.5) / m
    if sp.n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        dirs = np.stack([np.cos(t), np.sin(t)], 1)
    acc = 0.0
    for d in dirs:
        _, g = sp.newton(np.broadcast_to(d, (sp.C, sp.Q, sp.n)).copy())
        acc = acc + g
    return np.linalg.inv(acc / len(dirs))


def _low_modes(K, M, sp, v0, k=8):
    """Lowest nonzero generalized eigenpairs of (K, M), ascending."""
    nv = K.shape[0]
    k = min(k, nv - 2)
    scale = float(K.diagonal().max() / M.diagonal().max())
    try:
        lam, vec = eigsh(K, k=k, M=M, sigma=-1e-3 * scale, which="LM", v0=v0, tol=1e-12)
    except RuntimeError as exc:
        raise MeshQualityError(f"generalized eigensolve failed: {exc}") from exc
    order = np.argsort(lam)
    lam, vec = lam[order], vec[:, order]
    keep = lam > 1e-8 * scale
    if not keep.any():
        raise NumericFailureError("no nonzero eigenvalue found")
    return lam[keep], vec[:, keep]


def _normalize(u):
    return u / np.max(np.abs(u))


def _run(metric, mesh, volume, opts, u0, v0, avg):
    """Fixed point u -> eigenvector of (K_{grad u}, M) continuing u.

    The eigenvector is chosen by overlap with u rather than by smallest
    eigenvalue: the frozen operator is even in du while F*^2 is not, so
    for non-reversible metrics its bottom eigenvalue can undercut the
    true one with fields whose gradients oppose the reference field.
    """
    sp = fem_space(mesh, metric, volume)
    M = sp.mass
    u = _normalize(_project(sp, u0))
    history = []
    lam_prev = None
    for it in range(1, opts.max_outer + 1):
        grad = gradient(metric, mesh, u, volume)
        live = np.any(grad.vectors != 0, axis=2)
        ginv = reference_inverse(sp, np.where(live[..., None], grad.vectors, 0.0))
        ginv = np.where(live[..., None, None], ginv, avg)
        lam, vec = _low_modes(sp.stiffness(ginv), M, sp, v0)
        c = vec.T @ (M @ u)
        j = int(np.argmax(np.abs(c)))
        cluster = np.abs(lam - lam[j]) <= 1e-6 * lam[j]
        v = vec[:, cluster] @ c[cluster]
        v = _normalize(_project(sp, v))
        u_new = _normalize(_project(sp, (1 - opts.damping) * u + opts.damping * v))
        step = float(np.max(np.abs(u_new - u)))
        u = u_new
        history.append(float(lam[j]))
        if lam_prev is not None and abs(lam[j] - lam_prev) <= opts.tol_lambda * abs(lam_prev) \
                and step <= max(1e-6, math.sqrt(opts.tol_lambda)):
            return u, history, it, True
        lam_prev = lam[j]
    return u, history, opts.max_outer, False


def first_eigenpair(metric: MetricDescriptor, mesh: MeshChart, volume: VolumeDescriptor,
                    opts: Optional[SolverOptions] = None, initial=None) -> SpectralResult:
    """Smallest nonzero eigenvalue by the weighted-Laplacian fixed point.

    Starts are the lowest eigenvectors of the direction-averaged Riemannian
    metric and, for non-reversible metrics, their negatives (-u need not be
    an eigenfunction). Each start converges to some eigenfunction; the
    smallest Rayleigh quotient wins.
    """
    opts = opts or SolverOptions()
    sp = fem_space(mesh, metric, volume)
    avg = _average_inverse(sp, opts.n_directions)
    rng = np.random.default_rng(opts.seed)
    v0 = rng.standard_normal(mesh.n_vertices)
    if initial is None:
        _, basis = _low_modes(sp.stiffness(avg), sp.mass, sp, v0)
        seeds = [basis[:, i] for i in range(min(opts.n_starts, basis.shape[1]))]
    else:
        seeds = [np.asarray(initial, dtype=float)]
    starts = []
    for i, u0 in enumerate(seeds):
        starts.append((f"mode{i}", u0))
        if not metric.reversible:
            starts.append((f"mode{i}-negated", -u0))
    best, runs = None, {}
    for name, start in starts:
        u, hist, its, ok = _run(metric, mesh, volume, opts, start, v0, avg)
        lam = rayleigh_quotient(metric, mesh, volume, u)
        runs[name] = {"lambda1": lam, "iterations": its, "converged": ok, "history": hist}
        if ok and (best is None or lam < best[0]):
            best = (lam, u, hist, its, ok, name)
    if best is None:
        hist = next(iter(runs.values()))["history"]
        raise NumericFailureError("eigen-iteration did not converge", history=hist)
    lam, u, hist, its, ok, name = best
    lap = vertex_laplacian(metric, mesh, volume, u)
    res = float(np.max(np.abs(lap + lam * u)))
    viol = [i for i in range(3, len(hist)) if hist[i] > hist[i - 1] + 1e-10]
    return SpectralResult(lam, u, res, its, hist, res / (lam * np.max(np.abs(u))), ok, name, viol, runs)
