"""Look at the geometry a height function induces on the plane.

Prints the metric eigenstructure along a line through a random surface and
shows that the curvature (Christoffel) acceleration is quadratic in the
velocity and vanishes where the surface is flat.
"""
import numpy as np

from curvds import MlpEmbedding, christoffel_contraction, metric_diagnostics

surf = MlpEmbedding.random((2, 32, 32, 1), scale=0.5, seed=3)
points = [np.array([s, 0.3]) for s in np.linspace(-2, 2, 9)]
print(f"{'x1':>6} {'det G':>8} {'lambda_max':>10} {'steepest direction':>20}")
for rec in metric_diagnostics(surf, points):
    e = rec.eigvecs[:, 0]
    print(f"{rec.x[0]:6.2f} {rec.det_G:8.3f} {rec.eigvals[0]:10.3f}   ({e[0]:+.3f}, {e[1]:+.3f})")

x, v = np.array([0.4, -0.2]), np.array([1.0, 0.5])
a = christoffel_contraction(surf, x, v)
print("\nXi(x, v) v      ", a)
print("Xi(x, 2v) 2v / 4", christoffel_contraction(surf, x, 2 * v) / 4)
print("flat surface    ", christoffel_contraction(MlpEmbedding((2, 8, 1)), x, v))
