"""Independent brute-force oracles used to freeze expected test values.

These deliberately avoid the closed-form code paths they check: projection
boxes come from dense surface sampling, box IoU from Monte-Carlo volume
estimation, and nearest-neighbor metrics from full pairwise distances.
"""

from __future__ import annotations

import numpy as np

from objmap.quadrics import BBox2D, CameraModel, DualQuadric


_DIRECTION_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _unit_directions(n: int, seed: int) -> np.ndarray:
    key = (n, seed)
    if key not in _DIRECTION_CACHE:
        rng = np.random.default_rng(seed)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        _DIRECTION_CACHE[key] = d.astype(np.float32)
    return _DIRECTION_CACHE[key]


def sampled_projection_bbox(
    quadric: DualQuadric, camera: CameraModel, n: int = 1_000_000, seed: int = 0
) -> BBox2D:
    """Project n points sampled on the ellipsoid surface, take pixel extremes.

    The bulk math runs in float32: extremes come out to ~1e-3 px, plenty for
    the 0.1 px tolerances this oracle backs.
    """
    d = _unit_directions(n, seed % 3)  # a few reusable direction sets
    # fold ellipsoid shape, pose, and camera into one affine map of d
    R_cw, t_cw = camera.world_to_camera()
    A = (R_cw @ quadric.rotation * quadric.semi_axes).astype(np.float32)
    b = (R_cw @ quadric.center + t_cw).astype(np.float32)
    cam_pts = d @ A.T + b
    z = cam_pts[:, 2]
    front = z > 0
    u = camera.fx * cam_pts[front, 0] / z[front] + camera.cx
    v = camera.fy * cam_pts[front, 1] / z[front] + camera.cy
    return BBox2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()))


def monte_carlo_box_iou(
    a: DualQuadric, b: DualQuadric, n: int = 1_000_000, seed: int = 0
) -> float:
    """IoU of the two oriented boxes by sampling the union's AABB."""
    rng = np.random.default_rng(seed)
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 3))
    in_a = a.contains(pts)
    in_b = b.contains(pts)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def brute_force_nn_means(est: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(mean est->gt, mean gt->est) nearest-neighbor distances, full pairwise."""
    d = np.linalg.norm(est[:, None, :] - gt[None, :, :], axis=2)
    return float(d.min(axis=1).mean()), float(d.min(axis=0).mean())


def random_quadric(rng: np.random.Generator, center_scale: float = 2.0) -> DualQuadric:
    center = rng.uniform(-center_scale, center_scale, size=3)
    axes = rng.uniform(0.2, 1.5, size=3)
    return DualQuadric(center, random_rotation(rng), axes)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def camera_looking_at(
    eye: np.ndarray,
    target: np.ndarray,
    fx: float = 200.0,
    fy: float = 200.0,
    width: int = 320,
    height: int = 240,
) -> CameraModel:
    """Camera at eye with +z axis toward target (up = world -y bias)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    ref = np.array([0.0, -1.0, 0.0])
    if abs(fwd @ ref) > 0.98:
        ref = np.array([1.0, 0.0, 0.0])
    right = np.cross(ref, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    return CameraModel(
        fx=fx, fy=fy, cx=width / 2, cy=height / 2,
        width=width, height=height, rotation=R, translation=eye,
    )
