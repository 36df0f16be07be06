"""Scalar height functions psi(x) whose graphs define the embedded manifold.

Every embedding exposes ``derivatives(x, v=None)`` returning the value, the
spatial gradient and the spatial Hessian, batched over leading axes of ``x``:

    psi : (...,)      grad : (..., d)      hess : (..., d, d)

``v`` is only consulted by velocity-gated deformations.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError, PreconditionError

__all__ = [
    "MlpEmbedding",
    "n_params",
    "GateParams",
    "velocity_gate",
    "RbfDeformation",
    "BumpConfig",
    "bump_alpha",
    "bump_terms",
    "CompositeEmbedding",
    "sigma_from_radius",
    "rbf_metric",
    "rbf_metric_differential",
]


def _as_batch(x, d=None):
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    if d is not None and x.shape[-1] != d:
        raise PreconditionError(f"expected points of dimension {d}, got shape {x.shape}")
    return x.reshape(-1, x.shape[-1]), lead


def _unbatch(lead, psi, grad, hess):
    d = grad.shape[-1]
    return psi.reshape(lead), grad.reshape(lead + (d,)), hess.reshape(lead + (d, d))


def n_params(layer_sizes):
    """Number of weights and biases of a dense network."""
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


# ---------------------------------------------------------------------------
# tanh multilayer perceptron
# ---------------------------------------------------------------------------

class MlpEmbedding:
    """Dense network R^d -> R with tanh hidden layers and a linear output.

    Weights are stored as one flat vector, layer by layer: the (out, in)
    matrix in row-major order followed by the bias.

    Parameters
    ----------
    layer_sizes : sequence of int
        ``(d, n_1, ..., n_L, 1)``. ``(d, 1)`` gives an affine function.
    weights : array, shape (P,), optional
        Flat parameter vector; zeros (a flat manifold) when omitted.
    """

    def __init__(self, layer_sizes, weights=None):
        sizes = tuple(int(n) for n in layer_sizes)
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise PreconditionError(f"invalid layer sizes {layer_sizes!r}")
        self.layer_sizes = sizes
        size = n_params(sizes)
        if weights is None:
            weights = np.zeros(size)
        weights = np.array(weights, dtype=float).ravel()
        if weights.size != size:
            raise PreconditionError(f"expected {size} weights, got {weights.size}")
        self.weights = weights

    @classmethod
    def default(cls, dim, hidden=(32, 32), scale=1e-3, seed=None):
        """Network ``dim -> 32 -> 32 -> 1`` with weights uniform in [-scale, scale]."""
        return cls.random((dim, *hidden, 1), scale=scale, seed=seed)

    @classmethod
    def random(cls, layer_sizes, scale=1e-3, seed=None):
        rng = np.random.default_rng(seed)
        return cls(layer_sizes, rng.uniform(-scale, scale, n_params(layer_sizes)))

    @property
    def dim(self):
        return self.layer_sizes[0]

    @property
    def n_params(self):
        return self.weights.size

    def copy(self, weights=None):
        return MlpEmbedding(self.layer_sizes, self.weights if weights is None else weights)

    def layers(self, weights=None):
        """Views ``[(W, b), ...]`` into a flat weight vector."""
        w = self.weights if weights is None else weights
        out, i = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = w[i:i + n_in * n_out].reshape(n_out, n_in)
            i += n_in * n_out
            out.append((W, w[i:i + n_out]))
            i += n_out
        return out

    def derivatives(self, x, v=None):
        X, lead = _as_batch(x, self.dim)
        psi, grad, hess, _ = self.forward(X)
        return _unbatch(lead, psi, grad, hess)

    def __call__(self, x):
        return self.derivatives(x)[0]

    def forward(self, X, hessian=True):
        """Value, gradient and Hessian at the rows of ``X`` plus a cache for `backward`.

        Spatial derivatives are propagated layer by layer: for
        ``h = tanh(z)``, ``z = W h_in + b`` the input Jacobian and Hessian of
        ``h`` follow from those of ``h_in`` by the chain rule. With
        ``hessian=False`` the Hessian is skipped and returned as None.
        """
        n, d = X.shape
        layers = self.layers()
        h, A, B = X, None, None  # A: dh/dx (n, k, d), B: d2h/dx2 (n, k, d, d); None = identity / zero
        cache = []
        for W, b in layers[:-1]:
            k = W.shape[0]
            z = h @ W.T + b
            zp = np.broadcast_to(W, (n, k, d)) if A is None else np.matmul(W, A)
            zpp = None if B is None else np.matmul(W, B.reshape(n, -1, d * d)).reshape(n, k, d, d)
            t = np.tanh(z)
            s = 1.0 - t * t
            sp = -2.0 * t * s
            A_new = s[..., None] * zp
            B_new = None
            if hessian:
                B_new = sp[..., None, None] * zp[..., :, None] * zp[..., None, :]
                if zpp is not None:
                    B_new += s[..., None, None] * zpp
            cache.append((h, A, B, t, s, sp, zp, zpp))
            h, A, B = t, A_new, B_new
        W, b = layers[-1]
        w = W[0]
        psi = h @ w + b[0]
        if A is None:
            grad = np.broadcast_to(w, (n, d)).copy()
            hess = np.zeros((n, d, d)) if hessian else None
        else:
            grad = np.einsum("k,nkd->nd", w, A)
            hess = None
            if hessian:
                hess = np.einsum("k,nkij->nij", w, B)
                hess = 0.5 * (hess + hess.swapaxes(-1, -2))
        return psi, grad, hess, (cache, h, A, B, hessian)

    def backward(self, state, psi_bar, grad_bar, hess_bar):
        """Vector-Jacobian product with respect to the flat weights.

        Given cotangents of ``psi`` (n,), ``grad`` (n, d) and ``hess``
        (n, d, d) for the batch that produced ``state``, returns the gradient
        of ``sum(psi_bar*psi) + sum(grad_bar*grad) + sum(hess_bar*hess)``
        with respect to ``self.weights``. Any cotangent may be None;
        ``hess_bar`` must be None when the forward pass skipped the Hessian.
        """
        cache, h, A, B, hessian = state
        n = h.shape[0]
        d = self.dim
        if psi_bar is None:
            psi_bar = np.zeros(n)
        if grad_bar is None:
            grad_bar = np.zeros((n, d))
        if not hessian:
            if hess_bar is not None:
                raise PreconditionError("forward pass did not compute the Hessian")
        elif hess_bar is None:
            hessian = False
        else:
            hess_bar = 0.5 * (hess_bar + hess_bar.swapaxes(-1, -2))

        layers = self.layers()
        grads = [None] * len(layers)
        W, _ = layers[-1]
        w = W[0]
        if A is None:
            dW = psi_bar @ h + grad_bar.sum(axis=0)
        else:
            dW = psi_bar @ h + np.tensordot(A, grad_bar, axes=([0, 2], [0, 1]))
            if hessian:
                dW += np.tensordot(B, hess_bar, axes=([0, 2, 3], [0, 1, 2]))
        grads[-1] = (dW[None, :], np.array([psi_bar.sum()]))
        if A is None:
            return self._flatten(grads)

        h_bar = psi_bar[:, None] * w
        A_bar = grad_bar[:, None, :] * w[None, :, None]
        B_bar = hess_bar[:, None, :, :] * w[None, :, None, None] if hessian else None
        for idx in range(len(layers) - 2, -1, -1):
            W, _ = layers[idx]
            h_in, A_in, B_in, t, s, sp, zp, zpp = cache[idx]
            zp_bar = s[..., None] * A_bar
            s_bar = np.sum(A_bar * zp, axis=-1)
            z_bar = h_bar * s + s_bar * sp
            if hessian:
                B_sym = B_bar + B_bar.swapaxes(-1, -2)
                zp_bar += sp[..., None] * np.matmul(B_sym, zp[..., None])[..., 0]
                if zpp is not None:
                    z_bar += sp * np.sum((B_bar * zpp).reshape(n, -1, d * d), axis=-1)
                sp_bar = np.sum(np.matmul(B_bar, zp[..., None])[..., 0] * zp, axis=-1)
                spp = -2.0 * s * s + 4.0 * t * t * s
                z_bar += sp_bar * spp

            dW = z_bar.T @ h_in
            if A_in is None:
                dW += zp_bar.sum(axis=0)
            else:
                dW += np.tensordot(zp_bar, A_in, axes=([0, 2], [0, 2]))
                if hessian:
                    zpp_bar = s[..., None, None] * B_bar
                    dW += np.tensordot(zpp_bar, B_in, axes=([0, 2, 3], [0, 2, 3]))
            grads[idx] = (dW, z_bar.sum(axis=0))
            if idx > 0:
                h_bar = z_bar @ W
                A_bar = np.matmul(W.T, zp_bar)
                if hessian:
                    B_bar = np.matmul(W.T, zpp_bar.reshape(n, W.shape[0], d * d)).reshape(n, -1, d, d)
        return self._flatten(grads)

    @staticmethod
    def _flatten(grads):
        return np.concatenate([np.concatenate([dW.ravel(), db.ravel()]) for dW, db in grads])

    def param_derivatives(self, x):
        """Derivatives of psi, grad psi and hess psi with respect to the weights at one point.

        Returns arrays of shape (P,), (d, P) and (d, d, P).
        """
        X, _ = _as_batch(x, self.dim)
        if X.shape[0] != 1:
            raise PreconditionError("param_derivatives takes a single point")
        d = self.dim
        state = self.forward(X)[3]
        one, zero_g, zero_h = np.ones(1), np.zeros((1, d)), np.zeros((1, d, d))
        dpsi = self.backward(state, one, zero_g, zero_h)
        dgrad = np.empty((d, self.n_params))
        for i in range(d):
            e = zero_g.copy()
            e[0, i] = 1.0
            dgrad[i] = self.backward(state, np.zeros(1), e, zero_h)
        dhess = np.empty((d, d, self.n_params))
        for i in range(d):
            for j in range(i, d):
                e = zero_h.copy()
                e[0, i, j] = 1.0  # symmetrized inside backward
                dhess[i, j] = dhess[j, i] = self.backward(state, np.zeros(1), zero_g, e)
        return dpsi, dgrad, dhess


# ---------------------------------------------------------------------------
# kernel deformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateParams:
    """Sigmoid gate on the cosine between obstacle offset and velocity."""

    tau: float = 20.0
    theta_ref: float = math.pi / 2

    def __post_init__(self):
        if not self.tau > 0:
            raise PreconditionError("tau must be positive")
        if not 0.0 < self.theta_ref < math.pi:
            raise PreconditionError("theta_ref must lie in (0, pi)")


def velocity_gate(x, xbar, v, gp):
    """``1 / (1 + exp(-tau (cos(x - xbar, v) - cos theta_ref)))``.

    Returns 0 where ``|v| < 1e-9``. Raises DomainError at ``x == xbar``.
    Broadcasts over leading axes.
    """
    diff = np.asarray(x, dtype=float) - np.asarray(xbar, dtype=float)
    v = np.asarray(v, dtype=float)
    dn = np.linalg.norm(diff, axis=-1)
    if np.any(dn == 0.0):
        raise DomainError("velocity gate queried at the obstacle center")
    vn = np.linalg.norm(v, axis=-1)
    moving = vn >= 1e-9
    kcos = np.sum(diff * v, axis=-1) / (dn * np.where(moving, vn, 1.0))
    arg = -gp.tau * (kcos - math.cos(gp.theta_ref))
    gate = 0.5 * (1.0 - np.tanh(0.5 * arg))  # overflow-free logistic
    return np.where(moving, gate, 0.0)


class RbfDeformation:
    """Weighted sum of radial kernels ``sum_i eta_i k(x, xbar_i)``.

    Parameters
    ----------
    centers : array, shape (N, d)
    magnitudes : array, shape (N,)
        Signed weights eta_i.
    sigma : float or array of shape (N,)
        Gaussian widths.
    kernel : {"gaussian", "barrier"}
        ``barrier`` is ``exp(a / (b (rho - radius)^b))`` and is undefined for
        ``rho <= radius``.
    gate : GateParams, optional
        Makes the deformation velocity dependent. Each kernel is scaled by
        ``velocity_gate(x, xbar_i, -v)``, i.e. it is switched on while the
        motion approaches the center and off while it recedes. The gate is
        held constant under spatial differentiation.
    """

    def __init__(self, centers, magnitudes, sigma=1.0, kernel="gaussian",
                 a=1.0, b=1.0, radius=0.0, gate=None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        n = self.centers.shape[0]
        self.magnitudes = np.broadcast_to(np.asarray(magnitudes, dtype=float), (n,)).copy()
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,)).copy()
        if kernel not in ("gaussian", "barrier"):
            raise PreconditionError(f"unknown kernel {kernel!r}")
        if kernel == "gaussian" and np.any(self.sigma <= 0):
            raise PreconditionError("sigma must be positive")
        self.kernel = kernel
        self.a, self.b, self.radius = float(a), float(b), float(radius)
        self.gate = gate

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def gated(self):
        return self.gate is not None

    def _radial(self, X):
        """Kernel values, gradients and Hessians for every (point, center) pair."""
        diff = X[:, None, :] - self.centers[None, :, :]
        d = X.shape[1]
        eye = np.eye(d)
        if self.kernel == "gaussian":
            s2 = self.sigma ** 2
            k = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * s2))
            g = -diff / s2[:, None] * k[..., None]
            H = (k / s2)[..., None, None] * (diff[..., :, None] * diff[..., None, :] / s2[:, None, None] - eye)
            return k, g, H
        rho = np.linalg.norm(diff, axis=-1)
        u = rho - self.radius
        if np.any(u <= 0):
            raise DomainError("barrier kernel evaluated inside the obstacle radius")
        a, b = self.a, self.b
        c = a / (b * u ** b)
        k = np.exp(c)
        dc = -a * u ** (-b - 1)
        ddc = a * (b + 1) * u ** (-b - 2)
        f1 = k * dc
        f2 = k * (dc * dc + ddc)
        r_hat = diff / rho[..., None]
        P = r_hat[..., :, None] * r_hat[..., None, :]
        g = f1[..., None] * r_hat
        H = f2[..., None, None] * P + (f1 / rho)[..., None, None] * (eye - P)
        return k, g, H

    def weights(self, X, V=None):
        """Per-kernel weights, shape (n, N): magnitudes, times the gate if gated."""
        w = np.broadcast_to(self.magnitudes, (X.shape[0], self.magnitudes.size))
        if self.gate is None:
            return w
        if V is None:
            raise PreconditionError("velocity-gated deformation requires a velocity")
        gate = velocity_gate(X[:, None, :], self.centers[None], -V[:, None, :], self.gate)
        return w * gate

    def derivatives(self, x, v=None):
        X, lead = _as_batch(x, self.dim)
        V = None if v is None else np.asarray(v, dtype=float).reshape(X.shape)
        w = self.weights(X, V)
        k, g, H = self._radial(X)
        psi = np.sum(w * k, axis=1)
        grad = np.einsum("nm,nmd->nd", w, g)
        hess = np.einsum("nm,nmij->nij", w, H)
        return _unbatch(lead, psi, grad, hess)

    def value(self, x, v=None):
        return self.derivatives(x, v)[0]


def sigma_from_radius(r, eps=1e-3):
    """Gaussian width whose kernel equals ``eps`` at distance ``r``."""
    if not r > 0:
        raise DomainError("radius must be positive")
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    return math.sqrt(-0.5 * r * r / math.log(eps))


def _single_gaussian(deformation):
    if deformation.kernel != "gaussian" or deformation.centers.shape[0] != 1 or deformation.gated:
        raise PreconditionError("closed form requires a single ungated gaussian source")
    return deformation.centers[0], deformation.magnitudes[0], deformation.sigma[0]


def rbf_metric(deformation, x):
    """Pullback metric of a single gaussian source: ``I + eta^2/sigma^4 xt xt^T k^2``."""
    c, eta, sigma = _single_gaussian(deformation)
    xt = np.asarray(x, dtype=float) - c
    k = math.exp(-xt @ xt / (2 * sigma ** 2))
    return np.eye(xt.size) + (eta * k / sigma ** 2) ** 2 * np.outer(xt, xt)


def rbf_metric_differential(deformation, x, v):
    """Directional derivative ``dG(x)[v]`` of `rbf_metric`."""
    c, eta, sigma = _single_gaussian(deformation)
    xt = np.asarray(x, dtype=float) - c
    v = np.asarray(v, dtype=float)
    s2 = sigma ** 2
    k2 = math.exp(-xt @ xt / s2)
    sym = np.outer(v, xt) + np.outer(xt, v)
    return (eta ** 2 * k2 / s2 ** 2) * (sym - (2.0 / s2) * (xt @ v) * np.outer(xt, xt))


# ---------------------------------------------------------------------------
# bump modulation
# ---------------------------------------------------------------------------

@dataclass
class BumpConfig:
    """Compact-support flattening away from a reference point set.

    ``dist`` is the mean distance to the ``neighbors`` nearest reference
    points; the bump is ``exp(-dist^2 / (r^2 - dist^2))`` inside the ball
    and 0 outside, so it equals 1 on the reference set.
    """

    radius: float
    reference_set: np.ndarray
    neighbors: int = 5

    def __post_init__(self):
        self.reference_set = np.atleast_2d(np.asarray(self.reference_set, dtype=float))
        if not self.radius > 0:
            raise PreconditionError("bump radius must be positive")
        if self.reference_set.shape[0] == 0:
            raise PreconditionError("bump reference set is empty")
        if self.neighbors < 1:
            raise PreconditionError("neighbors must be >= 1")


def _knn_distance(cfg, X):
    K = min(cfg.neighbors, cfg.reference_set.shape[0])
    diff = X[:, None, :] - cfg.reference_set[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    if K < dist.shape[1]:
        idx = np.argpartition(dist, K - 1, axis=1)[:, :K]
    else:
        idx = np.broadcast_to(np.arange(K), (X.shape[0], K))
    rows = np.arange(X.shape[0])[:, None]
    return dist[rows, idx], diff[rows, idx]


def bump_terms(cfg, x):
    """Bump value, gradient and Hessian, batched like the embeddings."""
    X, lead = _as_batch(x)
    n, d = X.shape
    rho, diff = _knn_distance(cfg, X)
    K = rho.shape[1]
    D = rho.mean(axis=1)
    r2 = cfg.radius ** 2
    inside = D < cfg.radius
    alpha = np.zeros(n)
    grad = np.zeros((n, d))
    hess = np.zeros((n, d, d))
    if not np.any(inside):
        return _unbatch(lead, alpha, grad, hess)

    rho_i, diff_i, D_i = rho[inside], diff[inside], D[inside]
    safe = rho_i > 0
    inv = np.where(safe, 1.0 / np.where(safe, rho_i, 1.0), 0.0)
    u = diff_i * inv[..., None]
    dD = u.sum(axis=1) / K
    eye = np.eye(d)
    ddD = np.sum(inv[..., None, None] * (eye - u[..., :, None] * u[..., None, :]), axis=1) / K

    s = D_i ** 2
    q = r2 - s
    a = np.exp(-s / q)
    a1 = -a * r2 / q ** 2
    a2 = a * (r2 ** 2 / q ** 4 - 2.0 * r2 / q ** 3)
    ds = 2.0 * D_i[:, None] * dD
    dds = 2.0 * dD[:, :, None] * dD[:, None, :] + 2.0 * D_i[:, None, None] * ddD
    alpha[inside] = a
    grad[inside] = a1[:, None] * ds
    hess[inside] = a2[:, None, None] * ds[:, :, None] * ds[:, None, :] + a1[:, None, None] * dds
    return _unbatch(lead, alpha, grad, hess)


def bump_alpha(cfg, x):
    """Bump value in [0, 1] at ``x``."""
    return bump_terms(cfg, x)[0]


# ---------------------------------------------------------------------------
# composite
# ---------------------------------------------------------------------------

@dataclass
class CompositeEmbedding:
    """``alpha(x) psi_base(x) + psi_deformation(x[, v])``.

    The pullback metric of the composite is built from the summed gradient,
    which contains the symmetric coupling between base curvature and the
    deformation.
    """

    base: object
    deformation: RbfDeformation = None
    bump: BumpConfig = None

    @property
    def dim(self):
        return self.base.dim

    @property
    def gated(self):
        return self.deformation is not None and self.deformation.gated

    def base_derivatives(self, x):
        psi, g, H = self.base.derivatives(x)
        if self.bump is None:
            return psi, g, H
        a, ga, Ha = bump_terms(self.bump, x)
        outer = g[..., :, None] * ga[..., None, :]
        return (a * psi,
                a[..., None] * g + psi[..., None] * ga,
                a[..., None, None] * H + outer + outer.swapaxes(-1, -2) + psi[..., None, None] * Ha)

    def deformation_value(self, x, v=None):
        if self.deformation is None:
            return np.zeros(np.shape(x)[:-1])
        return self.deformation.value(x, v)

    def derivatives(self, x, v=None):
        psi, g, H = self.base_derivatives(x)
        if self.deformation is None:
            return psi, g, H
        if self.deformation.gated and v is None:
            raise PreconditionError("velocity-gated deformation requires a velocity")
        p2, g2, H2 = self.deformation.derivatives(x, v)
        return psi + p2, g + g2, H + H2
