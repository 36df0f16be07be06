"""Training losses, their analytic gradients, Adam and the training loops.

Both losses share one closed form. With ``g = grad psi``, ``q = |g|^2``,
``u = K (x - x*) [+ D v]`` and ``c = v^T (hess psi) v`` (second order only)

    G^-1 u + Xi v = u + beta g,    beta = (c - g.u) / (1 + q)

so the residual is ``r = target + u + beta g`` and everything downstream of
the network is a handful of per-sample scalars. Gradients with respect to
the weights are obtained by pulling the cotangents of ``(grad psi, hess psi)``
back through `MlpEmbedding.backward`.
"""
from dataclasses import dataclass, field, replace
import math
import time

import numpy as np

from .embeddings import MlpEmbedding
from .errors import PreconditionError, TrainingError
from .spd import SpdParam, spd_jacobian

__all__ = [
    "TrainConfig",
    "AdamState",
    "LossGradients",
    "TrainResult",
    "loss_first",
    "loss_second",
    "loss_and_gradients",
    "loss_gradients",
    "adam_step",
    "train_first",
    "train_second",
    "train_incremental",
]


@dataclass
class TrainConfig:
    """Hyperparameters for `train_first` / `train_second`."""

    hidden: tuple = (32, 32)
    lambda_reg: float = 1e-4
    lr0: float = 0.01
    max_iters: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    lr_decay: float = 0.5
    patience: int = 100
    min_improvement: float = 1e-3  # relative
    lr_min: float = 1e-5
    learn_K: bool = True
    learn_D: bool = True
    stiffness_kind: str = "spd"
    damping_kind: str = "spd"
    init_scale: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.lr0 > 0:
            raise PreconditionError("lr0 must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise PreconditionError("Adam betas must lie in (0, 1)")
        if self.lambda_reg < 0:
            raise PreconditionError("lambda_reg must be non-negative")
        if self.max_iters < 0:
            raise PreconditionError("max_iters must be non-negative")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _matrix(M):
    return M.matrix() if isinstance(M, SpdParam) else np.asarray(M, dtype=float)


def _samples(samples, order):
    X = np.atleast_2d(np.asarray(samples.positions, dtype=float))
    V = np.atleast_2d(np.asarray(samples.velocities, dtype=float))
    if X.shape[0] == 0:
        raise PreconditionError("dataset is empty")
    A = None
    if order == 2:
        if samples.accelerations is None:
            raise PreconditionError("second-order loss requires accelerations")
        A = np.atleast_2d(np.asarray(samples.accelerations, dtype=float))
    return X, V, A, np.asarray(samples.attractor, dtype=float)


def _forward(emb, K, D, samples, order):
    X, V, A, star = _samples(samples, order)
    psi, g, H, state = emb.forward(X, hessian=order == 2)
    xt = X - star
    u = xt @ K.T
    if order == 2:
        u = u + V @ D.T
        c = np.einsum("ni,nij,nj->n", V, H, V)
        target = A
    else:
        c = 0.0
        target = V
    q = np.sum(g * g, axis=1)
    beta = (c - np.sum(g * u, axis=1)) / (1.0 + q)
    r = target + u + beta[:, None] * g
    return dict(X=X, V=V, xt=xt, g=g, q=q, u=u, beta=beta, r=r, state=state)


def _total(r, emb, lam):
    data = math.fsum(np.sum(r * r, axis=1))
    return data + lam * math.fsum(emb.weights * emb.weights)


def loss_first(emb, K, samples, lambda_reg=0.0):
    """``sum_m |v_m + G^-1 K (x_m - x*)|^2 + lambda_reg |w|^2``."""
    f = _forward(emb, _matrix(K), None, samples, 1)
    return _total(f["r"], emb, lambda_reg)


def loss_second(emb, K, D, samples, lambda_reg=0.0):
    """``sum_m |a_m + G^-1 (K (x_m - x*) + D v_m) + Xi v_m|^2 + lambda_reg |w|^2``."""
    f = _forward(emb, _matrix(K), _matrix(D), samples, 2)
    return _total(f["r"], emb, lambda_reg)


@dataclass
class LossGradients:
    """Loss value and gradients; ``K`` / ``D`` are w.r.t. the SPD free vectors."""

    loss: float
    w: np.ndarray
    K: np.ndarray
    D: np.ndarray = None
    K_param: SpdParam = None
    D_param: SpdParam = None

    @property
    def alpha_K(self):
        return self.K_param.split(self.K)[0]

    @property
    def xi_K(self):
        return self.K_param.split(self.K)[1]

    @property
    def alpha_D(self):
        return None if self.D is None else self.D_param.split(self.D)[0]

    @property
    def xi_D(self):
        return None if self.D is None else self.D_param.split(self.D)[1]

    def as_tuple(self):
        return self.w, self.alpha_K, self.xi_K, self.alpha_D, self.xi_D


def loss_and_gradients(emb, K, D, samples, lambda_reg=0.0, order=None):
    """Loss and its analytic gradients.

    ``K`` and ``D`` are `SpdParam`; ``D=None`` selects the first-order loss
    unless ``order`` says otherwise.
    """
    order = order or (1 if D is None else 2)
    Km = K.matrix()
    Dm = D.matrix() if order == 2 else None
    f = _forward(emb, Km, Dm, samples, order)
    r, g, q, u, beta = f["r"], f["g"], f["q"], f["u"], f["beta"]
    loss = _total(r, emb, lambda_reg)

    r_bar = 2.0 * r
    beta_bar = np.sum(r_bar * g, axis=1)
    inv = 1.0 / (1.0 + q)
    g_bar = beta[:, None] * r_bar - (beta_bar * inv)[:, None] * (u + 2.0 * beta[:, None] * g)
    u_bar = r_bar - (beta_bar * inv)[:, None] * g
    H_bar = None
    if order == 2:
        V = f["V"]
        H_bar = (beta_bar * inv)[:, None, None] * V[:, :, None] * V[:, None, :]
    dw = emb.backward(f["state"], None, g_bar, H_bar) + 2.0 * lambda_reg * emb.weights

    K_bar = u_bar.T @ f["xt"]
    dK = np.einsum("kij,ij->k", spd_jacobian(K), K_bar)
    dD = None
    if order == 2:
        D_bar = u_bar.T @ f["V"]
        dD = np.einsum("kij,ij->k", spd_jacobian(D), D_bar)
    return LossGradients(loss, dw, dK, dD, K, D if order == 2 else None)


def loss_gradients(emb, K, D, samples, cfg=None):
    """``(dL/dw, dL/dalpha_K, dL/dxi_K, dL/dalpha_D, dL/dxi_D)``; D terms are None for first order."""
    lam = (cfg or TrainConfig()).lambda_reg
    return loss_and_gradients(emb, K, D, samples, lam).as_tuple()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    best: float = math.inf
    since_best: int = 0

    @classmethod
    def zeros(cls, n, lr):
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def _schedule(state, loss, cfg):
    """Decay-on-plateau: scale lr by ``lr_decay`` after ``patience`` iterations
    without a relative improvement of ``min_improvement``."""
    if loss < state.best * (1.0 - cfg.min_improvement):
        return replace(state, best=loss, since_best=0)
    since = state.since_best + 1
    if since >= cfg.patience:
        best = min(state.best, loss)
        return replace(state, lr=max(cfg.lr_min, state.lr * cfg.lr_decay), since_best=0, best=best)
    return replace(state, since_best=since)


def adam_step(params, grads, state, cfg, loss=None):
    """One bias-corrected Adam update; ``loss`` (if given) drives the lr schedule first."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise PreconditionError("parameter, gradient and state shapes differ")
    if loss is not None:
        state = _schedule(state, loss, cfg)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return new, replace(state, m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    embedding: MlpEmbedding
    K: SpdParam
    D: SpdParam
    history: list = field(default_factory=list)  # (iteration, loss, lr, wall_time)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    order: int = 1

    def write_log(self, path):
        from .data import write_csv
        write_csv(path, ["iteration", "loss", "lr", "wall_time"], self.history)


def _train(samples, cfg, order, emb, K, D):
    nw, nk = emb.n_params, K.size
    nd = D.size if order == 2 else 0
    theta = np.concatenate([emb.weights, K.vector()] + ([D.vector()] if order == 2 else []))
    mask = np.ones_like(theta)
    if not cfg.learn_K:
        mask[nw:nw + nk] = 0.0
    if order == 2 and not cfg.learn_D:
        mask[nw + nk:] = 0.0

    def unpack(th):
        e = emb.copy(th[:nw])
        k = K.with_vector(th[nw:nw + nk])
        d = D.with_vector(th[nw + nk:nw + nk + nd]) if order == 2 else None
        return e, k, d

    state = AdamState.zeros(theta.size, cfg.lr0)
    history = []
    best = (math.inf, theta)
    t0 = time.perf_counter()
    initial = None
    for it in range(cfg.max_iters + 1):
        e, k, d = unpack(theta)
        lg = loss_and_gradients(e, k, d, samples, cfg.lambda_reg, order)
        if not math.isfinite(lg.loss):
            raise TrainingError(it)
        if initial is None:
            initial = lg.loss
        history.append((it, lg.loss, state.lr, time.perf_counter() - t0))
        if lg.loss < best[0]:
            best = (lg.loss, theta)
        if it == cfg.max_iters:
            break
        grads = np.concatenate([lg.w, lg.K] + ([lg.D] if order == 2 else [])) * mask
        theta, state = adam_step(theta, grads, state, cfg, lg.loss)
    e, k, d = unpack(best[1])
    return TrainResult(e, k, d, history, initial, best[0], order)


def train_first(samples, cfg=None, attractor=None):
    """Fit ``w`` and ``K`` of the first-order system to (position, velocity) samples.

    Starts from a nearly flat network (weights uniform in ``±init_scale``)
    and ``K = I``. Returns the best iterate.
    """
    cfg = cfg or TrainConfig()
    d = np.asarray(samples.positions).shape[-1]
    emb = MlpEmbedding.random((d, *cfg.hidden, 1), scale=cfg.init_scale, seed=cfg.seed)
    K = SpdParam.identity(d, cfg.stiffness_kind)
    return _train(samples, cfg, 1, emb, K, None)


def train_second(samples, cfg=None, warm_start=None):
    """Fit ``w``, ``K`` and ``D`` of the second-order system.

    ``warm_start`` is an ``(embedding, K)`` pair (e.g. from `train_first`).
    ``D`` starts at the critical damping ``2 K^(1/2)``; without a warm start
    ``K = I`` and the network is nearly flat.
    """
    cfg = cfg or TrainConfig()
    d = np.asarray(samples.positions).shape[-1]
    if samples.accelerations is None:
        raise PreconditionError("second-order training requires accelerations")
    if warm_start is None:
        emb = MlpEmbedding.random((d, *cfg.hidden, 1), scale=cfg.init_scale, seed=cfg.seed)
        K = SpdParam.identity(d, cfg.stiffness_kind)
    else:
        emb, K = warm_start
        if emb.dim != d or K.dim != d:
            raise PreconditionError("warm start does not match the data dimension")
        emb = emb.copy()
    D = K.sqrt_scaled(2.0)
    if cfg.damping_kind != K.kind:
        D = SpdParam(D.alpha, D.xi, cfg.damping_kind)
    return _train(samples, cfg, 2, emb, K, D)


def train_incremental(samples, cfg_first=None, cfg_second=None):
    """First-order training followed by warm-started second-order training."""
    first = train_first(samples, cfg_first)
    second = train_second(samples, cfg_second or cfg_first, warm_start=(first.embedding, first.K))
    return first, second
