import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvds import DegenerateParameterError, PreconditionError, SpdParam, spd_materialize
from curvds.spd import orthogonal_factor, spd_jacobian

from conftest import fd_grad, rel_err


def test_identity_and_diagonal():
    assert np.array_equal(spd_materialize(SpdParam([1, 0], [0, 0])), np.eye(2))
    M = spd_materialize(SpdParam([1, 0], [math.log(2), 0]))
    assert np.allclose(M, np.diag([2.0, 1.0]), atol=1e-15)


def test_first_column_is_normalized_alpha():
    a = np.array([0.3, -2.0, 0.5])
    U, R = orthogonal_factor(a)
    assert np.allclose(U[:, 0], a / np.linalg.norm(a), atol=1e-15)
    assert np.all(np.diag(R) > 0)
    assert np.allclose(U.T @ U, np.eye(3), atol=1e-14)


def test_degenerate_alpha():
    with pytest.raises(DegenerateParameterError):
        spd_materialize(SpdParam([0.0, 1e-12], [0.0, 0.0]))


def test_kind_validation():
    with pytest.raises(PreconditionError):
        SpdParam([1, 0], [0, 0], kind="full")
    with pytest.raises(PreconditionError):
        SpdParam([1, 0], [0, 0, 0])


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_random_parameters_give_spd(d, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=d)
    if np.linalg.norm(alpha) < 1e-3:
        alpha[0] = 1.0
    xi = rng.uniform(-3, 3, d)
    M = spd_materialize(SpdParam(alpha, xi))
    assert np.max(np.abs(M - M.T)) <= 1e-12
    w = np.linalg.eigvalsh(M)
    assert np.allclose(np.sort(w), np.sort(np.exp(xi)), rtol=1e-10, atol=1e-10 * np.exp(xi).max())


def test_restricted_kinds():
    p = SpdParam([0.6, 0.8], [0.5, -0.2], kind="diagonal")
    assert np.allclose(p.matrix(), np.diag(np.exp([0.5, -0.2])))
    assert p.size == 2
    s = SpdParam([0.6, 0.8], [0.5, -0.2], kind="spherical")
    assert np.allclose(s.matrix(), math.exp(0.5) * np.eye(2))
    assert s.size == 1
    assert np.array_equal(s.with_vector([0.1]).xi, [0.1, 0.1])


@pytest.mark.parametrize("kind", ["spd", "diagonal", "spherical"])
def test_jacobian_fd(kind, rng):
    for _ in range(10):
        p = SpdParam(rng.normal(size=3), rng.uniform(-1, 1, 3), kind)
        J = spd_jacobian(p)
        fd = fd_grad(lambda v: p.with_vector(v).matrix(), p.vector())
        assert J.shape == (p.size, 3, 3)
        assert rel_err(J, np.moveaxis(fd, -1, 0)) <= 1e-7


def test_sqrt_scaled_is_critical_damping(rng):
    p = SpdParam(rng.normal(size=3), rng.uniform(-1, 1, 3))
    K, D = p.matrix(), p.sqrt_scaled(2.0).matrix()
    assert np.allclose(D @ D, 4 * K, rtol=1e-12, atol=1e-12)


def test_dict_round_trip(rng):
    p = SpdParam(rng.normal(size=2), rng.normal(size=2), "diagonal")
    q = SpdParam.from_dict(p.to_dict())
    assert q.kind == p.kind and np.array_equal(q.alpha, p.alpha) and np.array_equal(q.xi, p.xi)
