"""Unconstrained parametrization of symmetric positive definite matrices.

``M(alpha, xi) = U(alpha) diag(exp xi) U(alpha)^T`` where ``U`` is the Q
factor of a matrix whose first column is ``alpha``.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DegenerateParameterError, PreconditionError

__all__ = ["SpdParam", "spd_materialize", "orthogonal_factor", "spd_jacobian"]

KINDS = ("spd", "diagonal", "spherical")


def orthogonal_factor(alpha):
    """Q and R of ``[alpha, e_i ...]`` with ``diag(R) > 0``.

    Completion columns are the canonical basis vectors in index order,
    skipping the index of alpha's largest-magnitude component.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.linalg.norm(alpha) <= 1e-9:
        raise DegenerateParameterError("alpha is (numerically) zero")
    d = alpha.size
    skip = int(np.argmax(np.abs(alpha)))
    cols = [alpha] + [np.eye(d)[i] for i in range(d) if i != skip]
    Q, R = np.linalg.qr(np.column_stack(cols))
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


@dataclass
class SpdParam:
    """Parameters of an SPD matrix.

    ``kind="diagonal"`` ignores ``alpha`` (``U = I``); ``kind="spherical"``
    uses ``xi[0]`` for every eigenvalue.
    """

    alpha: np.ndarray
    xi: np.ndarray
    kind: str = "spd"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown SPD kind {self.kind!r}")
        self.alpha = np.array(self.alpha, dtype=float).ravel()
        self.xi = np.array(self.xi, dtype=float).ravel()
        if self.alpha.size != self.xi.size:
            raise PreconditionError("alpha and xi must have the same length")

    @classmethod
    def identity(cls, dim, kind="spd", scale=1.0):
        return cls(np.eye(dim)[0], np.full(dim, math.log(scale)), kind)

    @property
    def dim(self):
        return self.xi.size

    @property
    def size(self):
        return {"spd": 2 * self.dim, "diagonal": self.dim, "spherical": 1}[self.kind]

    def eigenvalues(self):
        xi = np.full(self.dim, self.xi[0]) if self.kind == "spherical" else self.xi
        return np.exp(xi)

    def matrix(self):
        return spd_materialize(self)

    def vector(self):
        if self.kind == "spd":
            return np.concatenate([self.alpha, self.xi])
        if self.kind == "diagonal":
            return self.xi.copy()
        return self.xi[:1].copy()

    def with_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        d = self.dim
        if self.kind == "spd":
            return SpdParam(vec[:d], vec[d:], self.kind)
        if self.kind == "diagonal":
            return SpdParam(self.alpha, vec, self.kind)
        return SpdParam(self.alpha, np.full(d, vec[0]), self.kind)

    def split(self, vec):
        """Split a free-parameter vector into its (alpha, xi) parts."""
        vec = np.asarray(vec, dtype=float)
        if self.kind == "spd":
            return vec[:self.dim], vec[self.dim:]
        return np.zeros(0), vec

    def sqrt_scaled(self, factor=2.0):
        """Parameters of ``factor * M^(1/2)``, the critical damping for unit mass."""
        return SpdParam(self.alpha, 0.5 * self.xi + math.log(factor), self.kind)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha.tolist(), "xi": self.xi.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["alpha"], data["xi"], data.get("kind", "spd"))


def spd_materialize(p):
    """The SPD matrix described by ``p``."""
    lam = p.eigenvalues()
    if p.kind != "spd":
        return np.diag(lam)
    U, _ = orthogonal_factor(p.alpha)
    M = (U * lam) @ U.T
    return 0.5 * (M + M.T)


def spd_jacobian(p):
    """Derivatives of the materialized matrix w.r.t. the free vector, shape (size, d, d)."""
    d = p.dim
    lam = p.eigenvalues()
    if p.kind == "spherical":
        return np.diag(lam)[None]
    if p.kind == "diagonal":
        out = np.zeros((d, d, d))
        out[np.arange(d), np.arange(d), np.arange(d)] = lam
        return out
    U, R = orthogonal_factor(p.alpha)
    Rinv_row = np.linalg.solve(R.T, np.eye(d)[0])  # first row of R^-1
    out = np.empty((2 * d, d, d))
    UL = U * lam
    for k in range(d):
        # dA = e_k e_1^T, so C = U^T dA R^-1 = outer(U[k], R^-1[0])
        C = np.outer(U[k], Rinv_row)
        low = np.tril(C, -1)
        dU = U @ (low - low.T)
        dM = dU @ UL.T
        out[k] = dM + dM.T
    for i in range(d):
        out[d + i] = lam[i] * np.outer(U[:, i], U[:, i])
    return out
