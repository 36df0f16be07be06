"""Planar two-link arm under operational space control, used to synthesize
configuration-space demonstrations.

Links are massless rods with point masses at their tips. Joint angles are
absolute for the first link and relative for the second.
"""
from dataclasses import dataclass
import math

import numpy as np

from .data import TrajectoryData, TrajectoryDataset
from .errors import PreconditionError, SimulationError

__all__ = ["ArmModel", "ArmTrajectory", "simulate_arm", "generate_arm_dataset"]


@dataclass(frozen=True)
class ArmModel:
    lengths: tuple = (1.0, 1.0)
    masses: tuple = (1.0, 1.0)
    gravity: float = 0.0
    friction: float = 0.0

    def __post_init__(self):
        if min(self.lengths) <= 0 or min(self.masses) <= 0:
            raise PreconditionError("link lengths and masses must be positive")
        if self.friction < 0:
            raise PreconditionError("friction must be non-negative")

    def forward_kinematics(self, q):
        l1, l2 = self.lengths
        q = np.asarray(q, dtype=float)
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        return np.stack([l1 * np.cos(q1) + l2 * np.cos(q12),
                         l1 * np.sin(q1) + l2 * np.sin(q12)], axis=-1)

    def jacobian(self, q):
        l1, l2 = self.lengths
        s1, c1 = math.sin(q[0]), math.cos(q[0])
        s12, c12 = math.sin(q[0] + q[1]), math.cos(q[0] + q[1])
        return np.array([[-l1 * s1 - l2 * s12, -l2 * s12],
                         [l1 * c1 + l2 * c12, l2 * c12]])

    def jacobian_dot(self, q, qd):
        l1, l2 = self.lengths
        w1, w12 = qd[0], qd[0] + qd[1]
        s1, c1 = math.sin(q[0]), math.cos(q[0])
        s12, c12 = math.sin(q[0] + q[1]), math.cos(q[0] + q[1])
        return np.array([[-l1 * c1 * w1 - l2 * c12 * w12, -l2 * c12 * w12],
                         [-l1 * s1 * w1 - l2 * s12 * w12, -l2 * s12 * w12]])

    def inverse_kinematics(self, p, elbow_up=False):
        """Joint angles reaching ``p``; the default branch has ``q2 > 0``."""
        l1, l2 = self.lengths
        x, y = p
        c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2)
        if abs(c2) > 1:
            raise PreconditionError(f"target {p} is out of reach")
        q2 = math.acos(c2) * (-1 if elbow_up else 1)
        q1 = math.atan2(y, x) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        return np.array([q1, q2])

    def mass_matrix(self, q):
        (l1, l2), (m1, m2) = self.lengths, self.masses
        c2 = math.cos(q[1])
        m22 = m2 * l2 * l2
        m12 = m22 + m2 * l1 * l2 * c2
        m11 = (m1 + m2) * l1 * l1 + m22 + 2 * m2 * l1 * l2 * c2
        return np.array([[m11, m12], [m12, m22]])

    def coriolis(self, q, qd):
        """``C(q, qd) qd``."""
        (l1, l2), (_, m2) = self.lengths, self.masses
        h = m2 * l1 * l2 * math.sin(q[1])
        return np.array([-h * (2 * qd[0] * qd[1] + qd[1] ** 2), h * qd[0] ** 2])

    def gravity_torque(self, q):
        (l1, l2), (m1, m2), g0 = self.lengths, self.masses, self.gravity
        c1, c12 = math.cos(q[0]), math.cos(q[0] + q[1])
        return np.array([(m1 + m2) * g0 * l1 * c1 + m2 * g0 * l2 * c12, m2 * g0 * l2 * c12])

    def osc_torque(self, q, qd, target, K, D):
        """``-J^T (K (p - p*) + D pdot) + g(q)``."""
        J = self.jacobian(q)
        err = self.forward_kinematics(q) - target
        return -J.T @ (K @ err + D @ (J @ qd)) + self.gravity_torque(q)

    def acceleration(self, q, qd, tau):
        rhs = tau - self.coriolis(q, qd) - self.gravity_torque(q) - self.friction * qd
        return np.linalg.solve(self.mass_matrix(q), rhs)

    def energy(self, q, qd, target, K):
        """Kinetic energy plus the task-space spring potential (gravity-free)."""
        err = self.forward_kinematics(q) - target
        return 0.5 * qd @ self.mass_matrix(q) @ qd + 0.5 * err @ K @ err


@dataclass
class ArmTrajectory:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray


def _osc_gains(K_osc, D_osc):
    K = 20.0 * np.eye(2) if K_osc is None else np.atleast_2d(np.asarray(K_osc, dtype=float))
    if D_osc is None:
        w, U = np.linalg.eigh(K)
        D = (U * (2.0 * np.sqrt(w))) @ U.T
    else:
        D = np.atleast_2d(np.asarray(D_osc, dtype=float))
    return K, D


def simulate_arm(arm, q0, target, K_osc=None, D_osc=None, dt=1e-3, steps=2997, samples=1000,
                 qd0=None):
    """RK4 simulation of the arm under operational space control.

    The ``steps + 1`` integrator states are resampled to ``samples`` points
    by taking every ``steps // (samples - 1)``-th state; endpoints are kept
    exactly when ``samples - 1`` divides ``steps``. Accelerations come from
    the equations of motion at each stored state.
    """
    q = np.array(q0, dtype=float)
    qd = np.zeros(2) if qd0 is None else np.array(qd0, dtype=float)
    if abs(math.sin(q[1])) <= 1e-3:
        raise PreconditionError("initial configuration is singular (sin q2 ~ 0)")
    if samples < 2 or steps < samples - 1:
        raise PreconditionError("need at least two samples and one step per sample")
    target = np.asarray(target, dtype=float)
    K, D = _osc_gains(K_osc, D_osc)

    def f(q, qd):
        tau = arm.osc_torque(q, qd, target, K, D)
        return arm.acceleration(q, qd, tau)

    stride = steps // (samples - 1)
    keep = set(range(0, stride * (samples - 1) + 1, stride))
    Q, QD, QDD = [], [], []
    for n in range(stride * (samples - 1) + 1):
        a = f(q, qd)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise SimulationError(f"non-finite state at step {n}")
        if n in keep:
            Q.append(q.copy())
            QD.append(qd.copy())
            QDD.append(a)
        if n == stride * (samples - 1):
            break
        k1q, k1v = qd, a
        k2q = qd + 0.5 * dt * k1v
        k2v = f(q + 0.5 * dt * k1q, k2q)
        k3q = qd + 0.5 * dt * k2v
        k3v = f(q + 0.5 * dt * k2q, k3q)
        k4q = qd + dt * k3v
        k4v = f(q + dt * k3q, k4q)
        q = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    t = dt * stride * np.arange(samples)
    return ArmTrajectory(t, np.array(Q), np.array(QD), np.array(QDD))


def generate_arm_dataset(n_trajectories=7, samples=1000, n_train=4, seed=0, arm=None,
                         target=(1.2, 0.6), radius=0.7, arc=(0.5 * math.pi, 1.25 * math.pi),
                         K_osc=None, D_osc=None, dt=1e-3, steps=None, split="interleaved"):
    """Configuration-space demonstrations of straight end-effector motions.

    Start points lie on an arc of ``radius`` around the task target at
    seeded uniform angles; the joint-space attractor is the inverse
    kinematics of the target.

    ``split="interleaved"`` ranks the demonstrations by start angle and
    spreads the training ones evenly over that ranking, always including
    both ends of the arc, so test demonstrations lie between training ones.
    ``split="random"`` uses a seeded permutation.
    """
    if split not in ("interleaved", "random"):
        raise PreconditionError(f"unknown split {split!r}")
    arm = arm or ArmModel()
    if n_trajectories < 1 or not 0 <= n_train <= n_trajectories:
        raise PreconditionError("invalid trajectory counts")
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=float)
    if steps is None:
        steps = 3 * (samples - 1)
    angles = rng.uniform(arc[0], arc[1], n_trajectories)
    trajectories, starts = [], []
    for ang in angles:
        p0 = target + radius * np.array([math.cos(ang), math.sin(ang)])
        q0 = arm.inverse_kinematics(p0)
        tr = simulate_arm(arm, q0, target, K_osc, D_osc, dt=dt, steps=steps, samples=samples)
        trajectories.append(TrajectoryData(tr.t, tr.q, tr.qd, tr.qdd))
        starts.append(q0.tolist())
    if split == "random":
        train = rng.permutation(n_trajectories)[:n_train]
    else:
        order = np.argsort(angles)
        ranks = np.unique(np.round(np.linspace(0, n_trajectories - 1, n_train)).astype(int)) if n_train else []
        train = order[ranks]
    train = sorted(int(i) for i in train)
    test = [i for i in range(n_trajectories) if i not in train]
    stride = steps // (samples - 1)
    meta = {
        "generator": "two_link_arm",
        "seed": seed,
        "task_target": target.tolist(),
        "start_angles": angles.tolist(),
        "initial_configurations": starts,
        "lengths": list(arm.lengths),
        "masses": list(arm.masses),
        "gravity": arm.gravity,
        "dt": dt,
        "steps": stride * (samples - 1),
        "split": split,
    }
    return TrajectoryDataset(trajectories, arm.inverse_kinematics(target),
                             train, test,
                             1.0 / (dt * stride), meta)
