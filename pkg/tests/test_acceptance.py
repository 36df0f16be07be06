"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is echoed in the terminal summary.
The desk-scale runs (criteria 3 to 6) are marked ``slow``.
"""
import math
import time

import numpy as np
import pytest

from curvds import (CompositeEmbedding, DSModel, GateParams, MlpEmbedding, PotentialSpec,
                    RbfDeformation, SecondOrderDS, SpdParam, christoffel_contraction, jacobian,
                    loss_and_gradients, loss_first, loss_second, rollout,
                    sigma_from_radius, train_first, train_second)
from curvds.arm import generate_arm_dataset
from curvds.data import SampleSet, TrajectoryData, TrajectoryDataset
from curvds.embeddings import BumpConfig, _knn_distance, rbf_metric, rbf_metric_differential
from curvds.geometry import christoffel_term, metric_solve
from curvds.learning import TrainConfig
from curvds.metrics import dtwd, evaluate

from conftest import fd_grad, record_criterion, rel_err


# -- 1: derivatives ------------------------------------------------------------

def test_criterion_1_derivatives():
    t0 = time.time()
    rng = np.random.default_rng(1)
    net = MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=1)
    worst = {}

    def note(key, err):
        worst[key] = max(worst.get(key, 0.0), err)

    X = rng.uniform(-2, 2, (200, 2))
    _, G, H = net.derivatives(X)
    for x, g, h in zip(X, G, H):
        note("grad", rel_err(g, fd_grad(net, x, 1e-4)))
        note("hess", rel_err(h, fd_grad(lambda p: net.derivatives(p)[1], x, 1e-4)))

    # composite surface: base network, two gaussian sources and a bump
    ref = rng.uniform(-1, 1, (30, 2))
    comp = CompositeEmbedding(net, RbfDeformation([[0.5, 0.2], [-0.7, -0.4]], [1.2, -0.6], [0.4, 0.3]),
                              BumpConfig(0.6, ref, neighbors=3))
    _, G, H = comp.derivatives(X)
    for x, g, h in zip(X, G, H):
        note("grad", rel_err(g, fd_grad(lambda p: comp.derivatives(p)[0], x, 1e-5)))
        note("hess", rel_err(h, fd_grad(lambda p: comp.derivatives(p)[1], x, 1e-5)))

    # parameter derivatives over all 1185 weights at several points
    for x in X[:4]:
        dpsi, dgrad, dhess = net.param_derivatives(x)

        def parts(w):
            psi, g, h = net.copy(w).derivatives(x)
            return np.concatenate([[psi], g, h.ravel()])

        fd = fd_grad(parts, net.weights, 1e-5)
        note("dpsi/dw", rel_err(dpsi, fd[0]))
        note("dgrad/dw", rel_err(dgrad, fd[1:3]))
        note("dhess/dw", rel_err(dhess.reshape(4, -1), fd[3:]))

    # loss gradients with respect to every weight and SPD parameter
    small = MlpEmbedding.random((2, 16, 16, 1), scale=0.6, seed=2)
    s = SampleSet(rng.normal(size=(20, 2)), rng.normal(size=(20, 2)), rng.normal(size=(20, 2)),
                  np.array([0.1, -0.1]))
    K = SpdParam(rng.normal(size=2), rng.normal(size=2) * 0.3)
    D = SpdParam(rng.normal(size=2), rng.normal(size=2) * 0.3)
    for order in (1, 2):
        lg = loss_and_gradients(small, K, D if order == 2 else None, s, 1e-3)

        def loss(w=small.weights, k=K.vector(), d=D.vector()):
            e = small.copy(w)
            if order == 1:
                return loss_first(e, K.with_vector(k), s, 1e-3)
            return loss_second(e, K.with_vector(k), D.with_vector(d), s, 1e-3)

        note("loss/dw", rel_err(lg.w, fd_grad(lambda w: loss(w=w), small.weights)))
        note("loss/dK", rel_err(lg.K, fd_grad(lambda k: loss(k=k), K.vector())))
        if order == 2:
            note("loss/dD", rel_err(lg.D, fd_grad(lambda d: loss(d=d), D.vector())))

    elapsed = time.time() - t0
    first = ("grad", "dpsi/dw")
    ok = all(v <= (1e-5 if k in first else 1e-4) for k, v in worst.items()) and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    assert record_criterion(1, "derivatives match central differences", ok, detail)


# -- 2: geometry closed forms -----------------------------------------------------

def literal_christoffel_batch(G, dG, V):
    """Xi v from Gamma^k_ij = 1/2 G^km (d_i G_mj + d_j G_mi - d_m G_ij); dG[..., i, j, m] = d_m G_ij."""
    Ginv = np.linalg.inv(G)
    first_kind = 0.5 * (np.einsum("nmji->nmij", dG) + dG - np.einsum("nijm->nmij", dG))
    gamma = np.einsum("nkm,nmij->nkij", Ginv, first_kind)
    return np.einsum("nkij,ni,nj->nk", gamma, V, V)


def test_criterion_2_geometry_closed_forms():
    t0 = time.time()
    rng = np.random.default_rng(2)
    n = 10_000
    worst = {}

    # Sherman-Morrison solve and inverse against dense linear algebra, d in 1..5
    err = 0.0
    for d in range(1, 6):
        g = rng.normal(size=(n // 5, d)) * rng.uniform(0.01, 5, (n // 5, 1))
        u = rng.normal(size=(n // 5, d))
        dense = np.linalg.solve(np.eye(d) + g[:, :, None] * g[:, None, :], u[..., None])[..., 0]
        err = max(err, np.max(np.abs(metric_solve(g, u) - dense) / np.linalg.norm(dense, axis=1)[:, None]))
    worst["sherman-morrison"] = err

    # Christoffel closed form against the literal expansion, metric partials both
    # analytic (d_m G_ij = H_im g_j + g_i H_jm) and by central differences of G
    net = MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=3)
    X, V = rng.uniform(-2, 2, (n, 2)), rng.normal(size=(n, 2))
    _, g, H = net.derivatives(X)
    G = np.eye(2) + g[:, :, None] * g[:, None, :]
    closed = christoffel_term(g, H, V)
    dG = np.einsum("nim,nj->nijm", H, g) + np.einsum("ni,njm->nijm", g, H)
    scale = np.maximum(np.linalg.norm(closed, axis=1), 1e-8)
    worst["christoffel/analytic"] = np.max(np.linalg.norm(literal_christoffel_batch(G, dG, V) - closed, axis=1) / scale)
    h = 1e-5
    cols = []
    for m in range(2):
        e = np.zeros(2)
        e[m] = h
        gp, gm = net.derivatives(X + e)[1], net.derivatives(X - e)[1]
        cols.append(((gp[:, :, None] * gp[:, None, :]) - (gm[:, :, None] * gm[:, None, :])) / (2 * h))
    dG_fd = np.stack(cols, axis=-1)
    lit = literal_christoffel_batch(G, dG_fd, V)
    worst["christoffel/fd"] = np.max(np.linalg.norm(lit - closed, axis=1) / scale)
    # the pointwise entry point agrees with the batch
    idx = rng.choice(n, 200, replace=False)
    worst["christoffel/pointwise"] = max(rel_err(christoffel_contraction(net, X[i], V[i]), closed[i])
                                         for i in idx)

    # single-source gaussian closed forms against J^T J and central differences
    e_metric = e_diff = 0.0
    for _ in range(n):
        c = rng.uniform(-1, 1, 2)
        sigma = rng.uniform(0.1, 1.0)
        df = RbfDeformation([c], rng.uniform(-3, 3), sigma)
        x = c + sigma * rng.normal(size=2) * 1.5
        v = rng.normal(size=2)
        G0 = rbf_metric(df, x)
        J = jacobian(df, x)
        e_metric = max(e_metric, np.max(np.abs(G0 - J.T @ J)))
        t = 1e-4 * sigma  # smaller steps are dominated by roundoff
        fd = (rbf_metric(df, x + t * v) - rbf_metric(df, x - t * v)) / (2 * t)
        e_diff = max(e_diff, rel_err(rbf_metric_differential(df, x, v), fd, floor=1e-6))
    worst["rbf metric"] = e_metric
    worst["rbf differential"] = e_diff

    tol = {"sherman-morrison": 1e-10, "christoffel/analytic": 1e-10, "christoffel/fd": 1e-4,
           "christoffel/pointwise": 1e-12, "rbf metric": 1e-12, "rbf differential": 1e-4}
    elapsed = time.time() - t0
    ok = all(worst[k] <= tol[k] for k in tol) and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    assert record_criterion(2, "geometry closed forms over 10^4 cases", ok, detail)


# -- 3: stability --------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_stability():
    t0 = time.time()
    worst_dist, worst_rise, all_conv = 0.0, -math.inf, True
    for seed in range(5):
        rng = np.random.default_rng(seed)
        emb = MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=seed)
        star = rng.uniform(-0.5, 0.5, 2)
        ds = SecondOrderDS(emb, PotentialSpec(star, np.eye(2), 2 * np.eye(2)))
        X0 = star + rng.uniform(-2, 2, (100, 2))
        tr = rollout(ds, X0, np.zeros_like(X0), dt=5e-3, steps=40_000, tol=1e-2, store_states=False)
        dist = np.linalg.norm(tr.final_x - star, axis=-1)
        all_conv &= bool(np.all(dist <= 1e-2))
        worst_dist = max(worst_dist, dist.max())
        E = tr.energy
        worst_rise = max(worst_rise, float(np.max(np.diff(E, axis=0) / E[0])))
    elapsed = time.time() - t0
    ok = all_conv and worst_rise <= 1e-6 and elapsed <= 300
    detail = (f"max final distance {worst_dist:.2e}, max energy rise/V0 {worst_rise:.1e}; "
              f"{elapsed:.0f} s")
    assert record_criterion(3, "second-order rollouts converge with non-increasing energy", ok, detail)


# -- 4: learning on the arm dataset ---------------------------------------------------

@pytest.mark.slow
def test_criterion_4_learning():
    t0 = time.time()
    wins, reductions, lines = 0, [], []
    for seed in range(5):
        ds = generate_arm_dataset(seed=seed)
        full = ds.samples("train")
        s = SampleSet(full.positions[::10], full.velocities[::10], full.accelerations[::10], full.attractor)
        cfg = TrainConfig(max_iters=3000, seed=seed)
        r1 = train_first(s, cfg)
        r2 = train_second(s, cfg, warm_start=(r1.embedding, r1.K))
        flat = MlpEmbedding((2, 32, 32, 1))
        red1 = 1 - r1.final_loss / loss_first(flat, np.eye(2), s)
        red2 = 1 - r2.final_loss / loss_second(flat, np.eye(2), 2 * np.eye(2), s)
        reductions.append((red1, red2))
        trained = evaluate(DSModel(r2.embedding, ds.attractor, r2.K, r2.D, 2).system(), ds)
        base = evaluate(DSModel.flat(2, ds.attractor, 2).system(), ds)
        beat = trained.rmse < base.rmse and trained.cs < base.cs and trained.dtwd < base.dtwd
        wins += beat
        lines.append(f"seed {seed}: rmse {trained.rmse:.4g}/{base.rmse:.4g} cs {trained.cs:.2e}/{base.cs:.2e} "
                     f"dtwd {trained.dtwd:.4g}/{base.dtwd:.4g}")
    print("\n".join(lines))
    elapsed = time.time() - t0
    ok = all(a >= 0.9 and b >= 0.9 for a, b in reductions) and wins >= 4 and elapsed <= 900
    detail = (f"loss reductions {', '.join(f'{a:.3f}/{b:.3f}' for a, b in reductions)}; "
              f"beats flat in {wins}/5 seeds; {elapsed:.0f} s")
    assert record_criterion(4, "training reduces loss and beats the flat model", ok, detail)


# -- 5: obstacle deformation -------------------------------------------------------

def _obstacle_on_path(seed):
    rng = np.random.default_rng(seed)
    emb = MlpEmbedding.random((2, 32, 32, 1), scale=0.3, seed=seed)
    m = DSModel(emb, np.zeros(2), SpdParam.identity(2), SpdParam.identity(2).sqrt_scaled(2.0), order=2)
    x0 = np.array([-2.0, rng.uniform(-0.1, 0.1)])
    free = rollout(m.system(order=1), x0, dt=1e-2, steps=3000, tol=1e-3)
    # a point of the nominal path at unit distance from the attractor, nudged sideways
    i = int(np.argmin(np.abs(np.linalg.norm(free.x, axis=1) - 1.0)))
    t = free.x[i + 1] - free.x[i - 1]
    normal = np.array([-t[1], t[0]]) / np.linalg.norm(t)
    return m, x0, free, free.x[i] + 0.1 * normal


@pytest.mark.slow
def test_criterion_5_obstacles():
    static_ok, gated_ok = True, True
    gains, gated_final, static_final = [], [], []
    for seed in range(5):
        m, x0, free, c = _obstacle_on_path(seed)
        df = RbfDeformation([c], 3.0, sigma_from_radius(0.5))
        tr = rollout(m.with_deformation(df).system(order=1), x0, dt=1e-2, steps=3000, tol=1e-3)
        before = np.min(np.linalg.norm(free.x - c, axis=1))
        after = np.min(np.linalg.norm(tr.x - c, axis=1))
        gains.append(after - before)
        static_ok &= bool(after > before and np.linalg.norm(tr.final_x) <= 1e-2)

        sigma = sigma_from_radius(1.0)
        finals = []
        for gate in (None, GateParams()):
            ds = m.with_deformation(RbfDeformation([c], 10.0, sigma, gate=gate)).system()
            ro = rollout(ds, x0, np.zeros(2), dt=5e-3, steps=6000, tol=1e-3, store_states=False)
            finals.append(float(np.linalg.norm(ro.final_x)))
        static_final.append(finals[0])
        gated_final.append(finals[1])
        gated_ok &= finals[1] <= 1e-2
    detail = (f"first-order clearance gain min {min(gains):.3f}; gated final distance max "
              f"{max(gated_final):.1e}; static second-order final distances "
              f"{', '.join(f'{d:.3f}' for d in static_final)}")
    assert record_criterion(5, "static obstacle is avoided, gated obstacle does not stall", static_ok and gated_ok,
                            detail)


# -- 6: hybrid concave avoidance -------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_hybrid_concave():
    flat = DSModel.flat(2, order=2, hidden=(4,))
    rho, R = 0.8, 0.5
    c = np.array([-1.0 - rho, 0.0])
    th = np.linspace(-np.pi / 2, np.pi / 2, 9)
    centers = c + rho * np.c_[np.cos(th), np.sin(th)]  # open side faces the incoming motion
    df = RbfDeformation(centers, 3.0, sigma_from_radius(R), gate=GateParams())
    model = flat.with_deformation(df)
    x0 = np.array([c[0] - 1.5, 0.05])
    budget = dict(dt=5e-3, steps=8000, tol=1e-3)

    def clearance(X):
        # distance to the arc; passing through the wall counts as zero clearance
        d = X - c
        r = np.linalg.norm(d, axis=1) - rho
        on_arc = np.abs(np.arctan2(d[:, 1], d[:, 0])) <= np.pi / 2
        crossed = np.any((np.sign(r[1:]) != np.sign(r[:-1])) & on_arc[1:] & on_arc[:-1])
        return 0.0 if crossed else float(np.min(np.where(on_arc, np.abs(r), np.min(
            np.linalg.norm(X[:, None] - centers[[0, -1]][None], axis=2), axis=1))))

    hyb = rollout(model.system(hybrid=True), x0, np.zeros(2), **budget)
    harm = rollout(model.system(), x0, np.zeros(2), **budget)
    hyb_dist, harm_dist = np.linalg.norm(hyb.final_x), np.linalg.norm(harm.final_x)
    gap = clearance(hyb.x)
    ok = hyb_dist <= 1e-2 and gap > 0 and harm_dist > 1e-2
    detail = (f"hybrid final distance {hyb_dist:.3f}, clearance {gap:.3f}; harmonic final distance "
              f"{harm_dist:.3f}, clearance {clearance(harm.x):.3f}")
    assert record_criterion(6, "hybrid rollout escapes a concave obstacle", ok, detail)


# -- 7: bump locality --------------------------------------------------------------

def test_criterion_7_bump_locality():
    ds = generate_arm_dataset(samples=100, seed=0)
    ref = ds.samples("train").positions
    emb = MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=7)
    K = SpdParam([0.8, 0.6], [0.3, -0.2])
    r = 0.15
    model = DSModel(emb, ds.attractor, K, bump=BumpConfig(r, ref, neighbors=5))
    f = model.system()
    lo, hi = ref.min(axis=0) - 0.5, ref.max(axis=0) + 0.5
    axes = [np.linspace(lo[i], hi[i], 80) for i in range(2)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    dist = _knn_distance(model.bump, grid)[0].mean(axis=1)
    field = f(grid)
    linear = -(grid - ds.attractor) @ K.matrix().T
    far = dist > r
    err_far = float(np.max(np.abs(field[far] - linear[far])))
    near_diff = float(np.max(np.abs(field[~far] - linear[~far]))) if (~far).any() else 0.0
    on_data = np.max(np.abs(f(ref) - (-(ref - ds.attractor) @ K.matrix().T)))
    ok = err_far <= 1e-12 and near_diff > 1e-3 and on_data > 1e-3
    detail = (f"{far.sum()} far points, max deviation {err_far:.1e}; near-data deviation {near_diff:.2e}")
    assert record_criterion(7, "bump restores the linear field away from the data", ok, detail)


# -- 8: metrics sanity --------------------------------------------------------------

def _self_generated(model, order, h=100.0, n=200):
    system = model.system()
    rng = np.random.default_rng(8)
    trs = []
    for _ in range(4):
        x0 = model.attractor + rng.uniform(-1.5, 1.5, 2)
        tr = rollout(system, x0, np.zeros(2) if order == 2 else None, dt=1 / h, steps=n - 1,
                     method="euler", stop_at_convergence=False)
        v = tr.v if order == 2 else system(tr.x)
        trs.append(TrajectoryData(tr.t, tr.x, v, tr.a if order == 2 else None))
    return TrajectoryDataset(trs, model.attractor, [0], [1, 2, 3], h)


def test_criterion_8_metrics_sanity():
    emb = MlpEmbedding.random((2, 16, 16, 1), scale=0.5, seed=8)
    K = SpdParam([0.6, 0.8], [0.2, -0.3])
    worst = 0.0
    for order in (1, 2):
        model = DSModel(emb, [0.2, -0.1], K, K.sqrt_scaled(2.0) if order == 2 else None, order)
        rep = evaluate(model.system(), _self_generated(model, order), method="euler")
        worst = max(worst, rep.rmse, rep.cs, rep.dtwd)
    hand = [
        (dtwd([0.0, 1.0], [0.0, 2.0]), 1.0),
        (dtwd([0.0, 1.0], [0.0, 1.0, 1.0]), 0.0),
        (dtwd([0.0], [1.0, 2.0, 3.0]), 6.0),
        (dtwd([[0, 0]], [[3, 4]]), 5.0),
        (dtwd([[0, 0], [1, 1], [2, 2]], [[0, 0], [2, 2]]), math.sqrt(2)),
    ]
    exact = all(got == want for got, want in hand)
    ok = worst <= 1e-6 and exact
    detail = f"max self-evaluation metric {worst:.1e}; DTW hand cases exact: {exact}"
    assert record_criterion(8, "metrics vanish on self-generated data", ok, detail)
