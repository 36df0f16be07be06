"""Vector fields on the learned manifold and fixed-step rollouts.

All fields are vectorized: ``x`` and ``v`` may carry leading batch axes.
"""
from dataclasses import dataclass

import numpy as np

from .embeddings import GateParams, velocity_gate
from .errors import DivergenceError, PreconditionError
from .geometry import (IDENTITY, christoffel_contraction, christoffel_term, metric_solve,
                       pullback_metric)

__all__ = [
    "PotentialSpec",
    "DissipationExtras",
    "HybridParams",
    "GateParams",
    "velocity_gate",
    "first_order_field",
    "second_order_field",
    "hybrid_field",
    "hybrid_switch",
    "FirstOrderDS",
    "SecondOrderDS",
    "HybridDS",
    "Trajectory",
    "rollout",
]


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-10):
        raise PreconditionError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise PreconditionError(f"{name} must be positive definite")
    return M


@dataclass
class PotentialSpec:
    """Quadratic potential ``0.5 (x - x*)^T K (x - x*)`` and damping ``D``."""

    attractor: np.ndarray
    K: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        self.attractor = np.asarray(self.attractor, dtype=float)
        self.K = _check_spd(self.K, "K")
        if self.D is not None:
            self.D = _check_spd(self.D, "D")

    def potential(self, x):
        xt = np.asarray(x, dtype=float) - self.attractor
        return 0.5 * np.einsum("...i,ij,...j->...", xt, self.K, xt)

    def force(self, x, v=None):
        """``K (x - x*) [+ D v]``."""
        out = (np.asarray(x, dtype=float) - self.attractor) @ self.K.T
        if v is not None:
            if self.D is None:
                raise PreconditionError("second-order field requires a damping matrix")
            out = out + np.asarray(v, dtype=float) @ self.D.T
        return out


@dataclass
class DissipationExtras:
    """Optional directional and attractor-localized dissipation.

    The directional term ``-lambda_dir (v/|v| - v_ref/|v_ref|)`` is active only
    with a reference field; the localized term
    ``-lambda_exp exp(-tau_exp |x - x*|^2) v`` acts as a viscous brake.
    """

    lambda_dir: float = 10.0
    reference_field: object = None
    lambda_exp: float = 0.0
    tau_exp: float = 1.0

    def __post_init__(self):
        if self.lambda_dir < 0 or self.lambda_exp < 0:
            raise PreconditionError("dissipation magnitudes must be non-negative")
        if not self.tau_exp > 0:
            raise PreconditionError("tau_exp must be positive")

    def acceleration(self, x, v, attractor):
        a = np.zeros_like(v)
        if self.reference_field is not None and self.lambda_dir > 0:
            ref = self.reference_field(x)
            nv = np.linalg.norm(v, axis=-1, keepdims=True)
            nr = np.linalg.norm(ref, axis=-1, keepdims=True)
            on = (nv > 1e-9) & (nr > 1e-9)
            diff = v / np.where(on, nv, 1.0) - ref / np.where(on, nr, 1.0)
            a -= self.lambda_dir * np.where(on, diff, 0.0)
        if self.lambda_exp > 0:
            r2 = np.sum((x - attractor) ** 2, axis=-1, keepdims=True)
            a -= self.lambda_exp * np.exp(-self.tau_exp * r2) * v
        return a


@dataclass
class HybridParams:
    """Switch between harmonic and geodesic motion driven by the deformation value.

    ``midpoint`` defaults to ``0.1 * max |eta_i|`` of the deformation.
    """

    midpoint: float = None
    rate: float = 50.0


def _per_point(fn, x, *rest):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return fn(x, *rest)
    flat = x.reshape(-1, x.shape[-1])
    rest = [np.asarray(r, dtype=float).reshape(flat.shape) for r in rest]
    out = np.array([fn(p, *(r[i] for r in rest)) for i, p in enumerate(flat)])
    return out.reshape(x.shape)


def first_order_field(emb, pot, x, ambient=IDENTITY):
    """Gradient system ``-G^-1 K (x - x*)``."""
    x = np.asarray(x, dtype=float)
    u = pot.force(x)
    if ambient.is_identity:
        _, g, _ = emb.derivatives(x)
        return -metric_solve(g, u)
    return _per_point(lambda p, q: -pullback_metric(emb, p, ambient).G_inv @ q, x, u)


def second_order_field(emb, pot, extras, x, v, ambient=IDENTITY):
    """``-G^-1 (K (x - x*) + D v) - Xi(x, v) v`` plus optional dissipation terms."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    u = pot.force(x, v)
    if ambient.is_identity:
        _, g, H = emb.derivatives(x, v)
        a = -metric_solve(g, u) - christoffel_term(g, H, v)
    else:
        def point(p, q, w):
            return (-pullback_metric(emb, p, ambient).G_inv @ q
                    - christoffel_contraction(emb, p, w, ambient))
        a = _per_point(point, x, u, v)
    if extras is not None:
        a = a + extras.acceleration(x, v, pot.attractor)
    return a


def hybrid_switch(value, params, magnitudes):
    """Decreasing sigmoid of ``|value|`` normalized to equal 1 at zero."""
    mid = params.midpoint
    if mid is None:
        mid = 0.1 * float(np.max(np.abs(magnitudes))) if np.size(magnitudes) else 0.0
    s = np.abs(value)
    return np.exp(np.logaddexp(0.0, -params.rate * mid) - np.logaddexp(0.0, params.rate * (s - mid)))


def hybrid_field(c, pot, x, v, params=None, switch=None):
    """``-Xi v - S(psi_bar(x, v)) G^-1 (K (x - x*) + D v)``.

    ``switch`` overrides S (e.g. ``0.0`` for pure geodesic motion).
    """
    params = params or HybridParams()
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _, g, H = c.derivatives(x, v)
    if switch is None:
        mags = c.deformation.magnitudes if c.deformation is not None else np.zeros(0)
        switch = hybrid_switch(c.deformation_value(x, v), params, mags)
    S = np.asarray(switch, dtype=float)[..., None] if np.ndim(switch) else switch
    return -christoffel_term(g, H, v) - S * metric_solve(g, pot.force(x, v))


# ---------------------------------------------------------------------------
# dynamical systems
# ---------------------------------------------------------------------------

class FirstOrderDS:
    order = 1

    def __init__(self, embedding, potential, ambient=IDENTITY):
        self.embedding = embedding
        self.potential = potential
        self.ambient = ambient

    @property
    def attractor(self):
        return self.potential.attractor

    def __call__(self, x):
        return first_order_field(self.embedding, self.potential, x, self.ambient)

    def energy(self, x, v=None):
        return self.potential.potential(x)


class SecondOrderDS:
    order = 2

    def __init__(self, embedding, potential, extras=None, ambient=IDENTITY):
        if potential.D is None:
            raise PreconditionError("second-order system requires a damping matrix")
        self.embedding = embedding
        self.potential = potential
        self.extras = extras
        self.ambient = ambient

    @property
    def attractor(self):
        return self.potential.attractor

    def __call__(self, x, v):
        return second_order_field(self.embedding, self.potential, self.extras, x, v, self.ambient)

    def energy(self, x, v):
        """``0.5 v^T G v + phi``, the Lyapunov function of the undriven oscillator."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.ambient.is_identity:
            _, g, _ = self.embedding.derivatives(x, v)
            kin = np.sum(v * v, axis=-1) + np.sum(g * v, axis=-1) ** 2
        else:
            kin = _per_point(lambda p, w: np.full_like(p, w @ pullback_metric(self.embedding, p, self.ambient).G @ w),
                             x, v)[..., 0]
        return 0.5 * kin + self.potential.potential(x)


class HybridDS(SecondOrderDS):
    def __init__(self, composite, potential, params=None):
        super().__init__(composite, potential)
        self.params = params or HybridParams()

    def __call__(self, x, v):
        return hybrid_field(self.embedding, self.potential, x, v, self.params)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled rollout. Arrays are (steps+1, [batch,] d); ``x``/``v``/``a`` are
    None when states were not stored."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    energy: np.ndarray
    final_x: np.ndarray
    final_v: np.ndarray
    converged: np.ndarray
    order: int

    @property
    def steps(self):
        return self.t.size - 1


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def rollout(ds, x0, v0=None, dt=1e-3, steps=10000, tol=1e-3, method="rk4",
            stop_at_convergence=True, store_states=True):
    """Fixed-step integration of a first- or second-order system.

    ``method`` is ``"rk4"`` (classic Runge-Kutta on x, or on the coupled
    (x, v) state) or ``"euler"`` (explicit Euler for first order,
    semi-implicit Euler ``v += dt a; x += dt v`` for second order).
    Integration stops early once every batch member is within ``tol`` of the
    attractor (and, for second order, slower than ``tol``).
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    if method not in ("rk4", "euler"):
        raise PreconditionError(f"unknown integrator {method!r}")
    x = np.array(x0, dtype=float)
    order = ds.order
    if order == 2:
        if v0 is None:
            raise PreconditionError("second-order rollout requires an initial velocity")
        v = np.array(v0, dtype=float).reshape(x.shape)
    else:
        v = None
    xs, vs, as_, es = [], [], [], []
    star = ds.attractor

    def record(x, v):
        if order == 1:
            vel = ds(x)
            acc = None
            e = ds.energy(x)
        else:
            vel = v
            acc = ds(x, v)
            e = ds.energy(x, v)
        if store_states:
            xs.append(x.copy())
            vs.append(vel.copy())
            if acc is not None:
                as_.append(acc)
        es.append(e)
        return vel, acc

    def converged(x, v):
        ok = np.linalg.norm(x - star, axis=-1) < tol
        if order == 2:
            ok &= np.linalg.norm(v, axis=-1) < tol
        return ok

    vel, acc = record(x, v)
    n = 0
    for n in range(1, steps + 1):
        if stop_at_convergence and np.all(converged(x, v)):
            n -= 1
            break
        if order == 1:
            if method == "euler":
                x = x + dt * vel
            else:
                k1 = vel
                k2 = ds(x + 0.5 * dt * k1)
                k3 = ds(x + 0.5 * dt * k2)
                k4 = ds(x + dt * k3)
                x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            if method == "euler":
                v = v + dt * acc
                x = x + dt * v
            else:
                k1x, k1v = v, acc
                k2x = v + 0.5 * dt * k1v
                k2v = ds(x + 0.5 * dt * k1x, k2x)
                k3x = v + 0.5 * dt * k2v
                k3v = ds(x + 0.5 * dt * k2x, k3x)
                k4x = v + dt * k3v
                k4v = ds(x + dt * k3x, k4x)
                x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
                v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not _finite(x) or (v is not None and not _finite(v)):
            raise DivergenceError(n)
        vel, acc = record(x, v)
        if not _finite(vel) or (acc is not None and not _finite(acc)):
            raise DivergenceError(n)

    count = len(es)
    return Trajectory(
        t=dt * np.arange(count),
        x=np.array(xs) if store_states else None,
        v=np.array(vs) if store_states else None,
        a=np.array(as_) if (store_states and order == 2) else None,
        energy=np.array(es),
        final_x=x,
        final_v=vel if order == 1 else v,
        converged=converged(x, v),
        order=order,
    )
