"""Bend a curved surface around an obstacle after training.

A gaussian bump placed next to the nominal path pushes the first-order
rollout away from it. On the second-order system a static bump can trap the
motion behind the obstacle; gating the bump by the approach direction
switches it off once the obstacle has been passed.
"""
import numpy as np

from curvds import DSModel, GateParams, MlpEmbedding, RbfDeformation, SpdParam, rollout, sigma_from_radius

emb = MlpEmbedding.random((2, 32, 32, 1), scale=0.3, seed=1)
K = SpdParam.identity(2)
model = DSModel(emb, np.zeros(2), K, K.sqrt_scaled(2.0), order=2)
x0 = np.array([-2.0, 0.05])

free = rollout(model.system(order=1), x0, dt=1e-2, steps=3000)
i = np.argmin(np.abs(np.linalg.norm(free.x, axis=1) - 1.0))
tangent = free.x[i + 1] - free.x[i - 1]
center = free.x[i] + 0.1 * np.array([-tangent[1], tangent[0]]) / np.linalg.norm(tangent)
print(f"obstacle at {np.round(center, 3)}, nominal clearance {np.linalg.norm(free.x - center, axis=1).min():.3f}")

bent = rollout(model.with_deformation(RbfDeformation([center], 3.0, sigma_from_radius(0.5))).system(order=1),
               x0, dt=1e-2, steps=3000)
print(f"first order, deformed: clearance {np.linalg.norm(bent.x - center, axis=1).min():.3f}, "
      f"final distance {np.linalg.norm(bent.final_x):.1e}")

sigma = sigma_from_radius(1.0)
for label, gate in (("static", None), ("gated", GateParams())):
    ds = model.with_deformation(RbfDeformation([center], 10.0, sigma, gate=gate)).system()
    tr = rollout(ds, x0, np.zeros(2), dt=5e-3, steps=6000)
    print(f"second order, {label:6}: final distance {np.linalg.norm(tr.final_x):.3g} after {tr.t[-1]:.1f} s")
