import math

import numpy as np
import pytest

from curvds import (CompositeEmbedding, DissipationExtras, DivergenceError, FirstOrderDS,
                    GateParams, HybridDS, HybridParams, MlpEmbedding, PotentialSpec,
                    PreconditionError, RbfDeformation, SecondOrderDS, first_order_field,
                    hybrid_field, hybrid_switch, rollout, second_order_field)
from curvds.embeddings import BumpConfig, _knn_distance
from curvds.geometry import christoffel_contraction, pullback_metric

FLAT = MlpEmbedding((2, 8, 1))


def pot(star=(0.0, 0.0), K=None, D=None):
    return PotentialSpec(np.asarray(star, float), np.eye(2) if K is None else K,
                         2 * np.eye(2) if D is None else D)


@pytest.fixture
def net():
    return MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=5)


def test_potential_validation():
    with pytest.raises(PreconditionError):
        PotentialSpec(np.zeros(2), -np.eye(2))
    with pytest.raises(PreconditionError):
        PotentialSpec(np.zeros(2), np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_flat_fields():
    x, v = np.array([0.3, -1.2]), np.array([0.5, 0.1])
    assert np.allclose(first_order_field(FLAT, pot(), x), -x, atol=0)
    assert np.allclose(second_order_field(FLAT, pot(), None, x, v), -x - 2 * v, atol=0)
    assert not first_order_field(FLAT, pot((1, 1)), np.ones(2)).any()
    assert not second_order_field(FLAT, pot((1, 1)), None, np.ones(2), np.zeros(2)).any()


def test_curved_fields_match_geometry(net, rng):
    K = np.array([[2.0, 0.3], [0.3, 1.0]])
    D = np.array([[1.5, 0.0], [0.0, 0.7]])
    p = pot((0.2, -0.1), K, D)
    for _ in range(10):
        x, v = rng.normal(size=2), rng.normal(size=2)
        Ginv = pullback_metric(net, x).G_inv
        assert np.allclose(first_order_field(net, p, x), -Ginv @ K @ (x - p.attractor), rtol=1e-12)
        want = -Ginv @ (K @ (x - p.attractor) + D @ v) - christoffel_contraction(net, x, v)
        assert np.allclose(second_order_field(net, p, None, x, v), want, rtol=1e-12)


def test_center_ray_not_deflected():
    df = RbfDeformation([[-1.0, -1.0]], 2.0, sigma=0.7)
    x = np.array([-0.5, -0.5])  # on the ray from the center through the attractor
    f = first_order_field(df, pot(), x)
    assert abs(f[0] * x[1] - f[1] * x[0]) <= 1e-15


def test_dissipation_terms():
    ref = FirstOrderDS(FLAT, pot())
    ex = DissipationExtras(lambda_dir=10.0, reference_field=ref, lambda_exp=3.0, tau_exp=2.0)
    x, v = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    a = second_order_field(FLAT, pot(), ex, x, v)
    base = -x - 2 * v
    direction = -10.0 * (v / 2.0 - np.array([-1.0, 0.0]))
    brake = -3.0 * math.exp(-2.0) * v
    assert np.allclose(a, base + direction + brake, rtol=1e-14)
    # at rest the directional term is off
    assert np.allclose(second_order_field(FLAT, pot(), ex, x, np.zeros(2)), -x)


def test_hybrid_switch():
    p = HybridParams(midpoint=0.5, rate=50.0)
    assert hybrid_switch(0.0, p, [5.0]) == pytest.approx(1.0, abs=1e-15)
    # normalized so that S(0) = 1, hence S(midpoint) = (1 + exp(-rate * midpoint)) / 2
    assert hybrid_switch(0.5, p, [5.0]) == pytest.approx((1 + math.exp(-25)) / 2, rel=1e-14)
    assert hybrid_switch(5.0, p, [5.0]) < 1e-90
    # default midpoint is a tenth of the largest magnitude
    assert hybrid_switch(0.2, HybridParams(), [-2.0, 1.0]) == pytest.approx((1 + math.exp(-10)) / 2, rel=1e-14)


def test_hybrid_reduces_to_second_order(net, rng):
    far = RbfDeformation([[50.0, 50.0]], 1.0, sigma=0.3, gate=GateParams())
    c = CompositeEmbedding(net, far)
    for _ in range(5):
        x, v = rng.normal(size=2), rng.normal(size=2)
        assert np.allclose(hybrid_field(c, pot(), x, v), second_order_field(net, pot(), None, x, v),
                           rtol=1e-6, atol=1e-12)


def test_hybrid_far_flat_and_geodesic_limit(rng):
    c = CompositeEmbedding(FLAT, RbfDeformation([[30.0, 0.0]], 1.0, gate=GateParams()))
    x, v = rng.normal(size=2), rng.normal(size=2)
    assert np.allclose(hybrid_field(c, pot(), x, v), -x - 2 * v, atol=1e-12)
    assert not hybrid_field(c, pot(), x, v, switch=0.0).any()


def test_first_order_rollout_exponential():
    tr = rollout(FirstOrderDS(FLAT, pot()), np.array([1.0, 0.0]), dt=1e-3, steps=1000,
                 stop_at_convergence=False)
    assert tr.t[-1] == pytest.approx(1.0)
    assert np.linalg.norm(tr.final_x) == pytest.approx(math.exp(-1), abs=1e-4)


def test_rollout_at_equilibrium():
    tr = rollout(SecondOrderDS(FLAT, pot((0.5, 0.5))), np.array([0.5, 0.5]), np.zeros(2),
                 dt=1e-2, steps=50, stop_at_convergence=False)
    assert np.all(tr.x == 0.5) and not tr.v.any()


def test_rollout_preconditions():
    with pytest.raises(PreconditionError):
        rollout(SecondOrderDS(FLAT, pot()), np.ones(2))
    with pytest.raises(PreconditionError):
        rollout(FirstOrderDS(FLAT, pot()), np.ones(2), dt=0.0)
    with pytest.raises(PreconditionError):
        rollout(FirstOrderDS(FLAT, pot()), np.ones(2), method="leapfrog")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    # explicit Euler on xdot = -100 x with dt = 0.1 blows up geometrically
    p = PotentialSpec(np.zeros(2), 100 * np.eye(2))
    with pytest.raises(DivergenceError) as err:
        rollout(FirstOrderDS(FLAT, p), np.ones(2), dt=0.1, steps=10000, method="euler")
    assert err.value.step > 0


def test_energy_non_increasing(net, rng):
    ds = SecondOrderDS(net, pot((0.3, -0.2)))
    X0 = rng.uniform(-2, 2, (10, 2))
    tr = rollout(ds, X0, np.zeros_like(X0), dt=5e-3, steps=4000, tol=1e-3)
    E = tr.energy
    assert np.all(np.diff(E, axis=0) <= 1e-6 * E[0])
    assert np.all(np.linalg.norm(tr.final_x - ds.attractor, axis=-1) <= 1e-2)


def test_second_order_field_consistent_with_rollout(net):
    ds = SecondOrderDS(net, pot())
    dt = 1e-3
    tr = rollout(ds, np.array([1.0, -0.5]), np.array([0.2, 0.4]), dt=dt, steps=20, stop_at_convergence=False)
    fd = (tr.x[2:] - 2 * tr.x[1:-1] + tr.x[:-2]) / dt ** 2
    assert np.max(np.abs(fd - tr.a[1:-1])) <= 1e-3 * np.max(np.abs(tr.a))


def test_rk4_order(net):
    ds = FirstOrderDS(net, pot())
    x0 = np.array([1.5, -1.0])
    ref = rollout(ds, x0, dt=1e-3, steps=1000, stop_at_convergence=False).final_x
    errs = [np.linalg.norm(rollout(ds, x0, dt=dt, steps=round(1 / dt), stop_at_convergence=False).final_x - ref)
            for dt in (0.1, 0.05)]
    assert math.log2(errs[0] / errs[1]) >= 3.5


def test_bump_restores_linear_field(net, rng):
    ref = rng.normal(size=(20, 2)) * 0.3
    cfg = BumpConfig(0.5, ref, neighbors=3)
    c = CompositeEmbedding(net, None, cfg)
    K = np.array([[1.5, 0.2], [0.2, 0.8]])
    p = pot((0.0, 0.0), K)
    X = rng.uniform(-3, 3, (200, 2))
    f = first_order_field(c, p, X)
    far = _knn_distance(cfg, X)[0].mean(axis=1) > 0.5
    assert far.sum() > 50
    assert np.max(np.abs(f[far] + X[far] @ K.T)) <= 1e-12


def test_hybrid_ds_far_from_obstacle():
    ds = HybridDS(CompositeEmbedding(FLAT, RbfDeformation([[9.0, 9.0]], 1.0, gate=GateParams())), pot())
    a = ds(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert np.allclose(a, [-1.0, -2.0], atol=1e-12)
