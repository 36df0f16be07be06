"""Pullback metric, its inverse and the Christoffel contraction of a graph embedding.

For ``Psi(x) = [x, psi(x)]`` and identity ambient metric the metric is
``G = I + g g^T`` with ``g = grad psi``; its inverse follows from
Sherman-Morrison and the Christoffel symbols reduce to
``Gamma^k_ij = (G^-1 g)^k d_i d_j psi``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PreconditionError

__all__ = [
    "ChartState",
    "MetricBundle",
    "AmbientMetric",
    "KernelAmbientMetric",
    "IDENTITY",
    "jacobian",
    "pullback_metric",
    "christoffel_contraction",
    "metric_diagnostics",
    "MetricRecord",
    "metric_solve",
    "christoffel_term",
    "metric_matrix",
]


@dataclass
class ChartState:
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=float)
        parts = [p for p in (self.x, self.v, self.a) if p is not None]
        if self.x.ndim != 1 or self.x.size < 1 or any(p.shape != self.x.shape for p in parts):
            raise PreconditionError("x, v, a must be vectors of one common dimension")
        if not all(np.all(np.isfinite(p)) for p in parts):
            raise DomainError("chart state has non-finite components")


@dataclass
class MetricBundle:
    G: np.ndarray
    G_inv: np.ndarray
    det_G: float
    eigvals: np.ndarray
    eigvecs: np.ndarray


class AmbientMetric:
    """Constant metric on the (d+1)-dimensional ambient space; ``None`` means identity."""

    def __init__(self, matrix=None):
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise PreconditionError("ambient metric must be square")
            if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12):
                raise PreconditionError("ambient metric must be symmetric")
            if np.linalg.eigvalsh(matrix).min() <= 0:
                raise PreconditionError("ambient metric must be positive definite")
        self.matrix = matrix

    @property
    def is_identity(self):
        return self.matrix is None

    def at(self, y):
        y = np.asarray(y, dtype=float)
        return np.eye(y.shape[-1]) if self.matrix is None else self.matrix


IDENTITY = AmbientMetric()


class KernelAmbientMetric(AmbientMetric):
    """``H(y) = I + grad k(y) grad k(y)^T`` for a gaussian bump ``k`` in ambient space.

    Used for the classical obstacle method, where the obstacle is placed at
    ``Psi(xbar)`` in the ambient space and the metric is pulled back.
    """

    def __init__(self, centers, magnitudes, sigma):
        super().__init__(None)
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.magnitudes = np.broadcast_to(np.asarray(magnitudes, dtype=float), (self.centers.shape[0],))
        self.sigma = float(sigma)

    @classmethod
    def from_chart(cls, embedding, centers, magnitudes, sigma):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        heights = embedding.derivatives(centers)[0]
        return cls(np.column_stack([centers, heights]), magnitudes, sigma)

    @property
    def is_identity(self):
        return False

    def at(self, y):
        y = np.asarray(y, dtype=float)
        diff = y - self.centers
        s2 = self.sigma ** 2
        k = np.exp(-np.sum(diff * diff, axis=-1) / (2 * s2))
        grad = -(self.magnitudes * k / s2) @ diff
        return np.eye(y.size) + np.outer(grad, grad)


def _point(x, emb):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != emb.dim:
        raise PreconditionError(f"expected a point of dimension {emb.dim}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite chart point")
    return x


def _checked_grad(emb, x, v=None):
    psi, g, H = emb.derivatives(x, v)
    if not (np.isfinite(psi) and np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise DomainError(f"embedding returned non-finite derivatives at {x}")
    return psi, g, H


# -- vectorized kernels ------------------------------------------------------

def metric_solve(g, u):
    """``(I + g g^T)^-1 u`` for batches of gradients ``g`` and vectors ``u``."""
    g = np.asarray(g, dtype=float)
    coef = np.sum(g * u, axis=-1) / (1.0 + np.sum(g * g, axis=-1))
    return u - coef[..., None] * g


def christoffel_term(g, hess, v):
    """Closed-form ``Xi(x, v) v = G^-1 g (v^T hess v)`` for ``G = I + g g^T``."""
    curv = np.einsum("...i,...ij,...j->...", v, hess, v)
    return g * (curv / (1.0 + np.sum(g * g, axis=-1)))[..., None]


def metric_matrix(g):
    """``I + g g^T`` for a batch of gradients."""
    g = np.asarray(g, dtype=float)
    return np.eye(g.shape[-1]) + g[..., :, None] * g[..., None, :]


# -- single-point operations -------------------------------------------------

def jacobian(emb, x, v=None):
    """(d+1) x d Jacobian of ``Psi(x) = [x, psi(x)]``."""
    x = _point(x, emb)
    _, g, _ = _checked_grad(emb, x, v)
    return np.vstack([np.eye(x.size), g[None, :]])


def _metric(emb, x, H, v=None):
    psi, g, _ = _checked_grad(emb, x, v)
    if H.is_identity:
        return metric_matrix(g), g
    J = np.vstack([np.eye(x.size), g[None, :]])
    Hy = H.at(np.append(x, psi))
    G = J.T @ Hy @ J
    return 0.5 * (G + G.T), g


def pullback_metric(emb, x, H=IDENTITY, v=None):
    """Pullback ``G = J^T H J`` with inverse, determinant and eigen-decomposition.

    Eigenvalues are sorted in descending order.
    """
    x = _point(x, emb)
    G, g = _metric(emb, x, H, v)
    if H.is_identity:
        q = g @ g
        G_inv = np.eye(x.size) - np.outer(g, g) / (1.0 + q)
        det = 1.0 + q
    else:
        G_inv = np.linalg.inv(G)
        G_inv = 0.5 * (G_inv + G_inv.T)
        det = float(np.linalg.det(G))
    w, U = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    return MetricBundle(G=G, G_inv=G_inv, det_G=det, eigvals=w[order], eigvecs=U[:, order])


def christoffel_contraction(emb, x, v, H=IDENTITY, step=1e-5):
    """The geometric acceleration term ``Xi(x, v) v`` (quadratic in ``v``).

    With a non-identity ambient metric the metric partials are taken by
    central differences of ``G`` with the given step.
    """
    x = _point(x, emb)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape or not np.all(np.isfinite(v)):
        raise PreconditionError("velocity must be a finite vector matching x")
    if H.is_identity:
        _, g, hess = _checked_grad(emb, x)
        return christoffel_term(g, hess, v)
    d = x.size
    dG = np.empty((d, d, d))  # dG[m] = d G / d x^m
    for m in range(d):
        e = np.zeros(d)
        e[m] = step
        dG[m] = (_metric(emb, x + e, H)[0] - _metric(emb, x - e, H)[0]) / (2 * step)
    G = _metric(emb, x, H)[0]
    # first kind, contracted twice with v: v^i v^j (d_i g_mj + d_j g_mi - d_m g_ij) / 2
    dv = np.einsum("imj,i,j->m", dG, v, v)
    lower = dv - 0.5 * np.einsum("mij,i,j->m", dG, v, v)
    return np.linalg.solve(G, lower)


@dataclass
class MetricRecord:
    x: np.ndarray
    det_G: float
    eigvals: np.ndarray
    eigvecs: np.ndarray


def metric_diagnostics(emb, grid, H=IDENTITY, v=None):
    """Determinant and eigen-structure of the metric at every grid point."""
    grid = [np.asarray(p, dtype=float) for p in grid]
    if not grid:
        raise PreconditionError("diagnostic grid is empty")
    out = []
    for p in grid:
        b = pullback_metric(emb, p, H, v)
        out.append(MetricRecord(x=p, det_G=b.det_G, eigvals=b.eigvals, eigvecs=b.eigvecs))
    return out
