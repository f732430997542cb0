"""Oriented 3D box IoU: exact polytope clipping vs Monte-Carlo sampling."""

import numpy as np

from objmap.quadrics import DualQuadric, assemble_dual_quadric, iou_3d

# The hand-checkable case: two unit cubes offset by half a side.
a = assemble_dual_quadric([0, 0, 0], np.eye(3), [0.5, 0.5, 0.5])
b = assemble_dual_quadric([0.5, 0, 0], np.eye(3), [0.5, 0.5, 0.5])
print("half-offset unit cubes:", iou_3d(a, b), "(expected 1/3)")

# Rotated pairs against a quick Monte-Carlo estimate.
rng = np.random.default_rng(0)
for trial in range(5):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    qa = DualQuadric(rng.uniform(-1, 1, 3), np.eye(3), rng.uniform(0.3, 1.0, 3))
    qb = DualQuadric(qa.center + rng.uniform(-0.5, 0.5, 3), R, rng.uniform(0.3, 1.0, 3))

    corners = np.vstack([qa.corners(), qb.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(200_000, 3))
    in_a, in_b = qa.contains(pts), qb.contains(pts)
    union = np.count_nonzero(in_a | in_b)
    mc = np.count_nonzero(in_a & in_b) / union if union else 0.0

    exact = iou_3d(qa, qb)
    print(f"pair {trial}: exact={exact:.4f}  monte-carlo={mc:.4f}  diff={abs(exact-mc):.4f}")
