"""ID-tagged 3D Gaussian store and the incremental update-mask machinery.

Gaussians live in flat numpy arrays (structure-of-arrays) keyed by an owning
object id (0 = background).  Two kinds exist: opaque Gaussians carry
geometry (opacity starts at 0.9, clamped >= 0.5) and transparent Gaussians
correct color (opacity starts at 0.1, clamped <= 0.5).

The per-frame update flow: compare the current render against the frame
(compute_update_masks), spawn Gaussians at badly-explained pixels
(densify_from_mask), and restrict optimization to Gaussians whose image
footprints touch their object's masked pixels (select_trainable).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .frames import FrameBundle
from .plyio import read_point_ply, write_point_ply
from .quadrics import CameraModel

logger = logging.getLogger(__name__)

KIND_OPAQUE = 0
KIND_TRANSPARENT = 1

OPAQUE_INIT_OPACITY = 0.9
TRANSPARENT_INIT_OPACITY = 0.1
OPACITY_SPLIT = 0.5  # class boundary: opaque stays above, transparent below
OPACITY_MARGIN = 5e-3
SCALE_MIN = 1e-4
SCALE_MAX = 1.0


@dataclass
class GaussianPrimitive:
    """One Gaussian: position, anisotropic scale, orientation, appearance."""

    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray
    object_id: int
    kind: int = KIND_OPAQUE


class GaussianStore:
    """Structure-of-arrays Gaussian container; insertion order is stable."""

    def __init__(self):
        self.means = np.empty((0, 3))
        self.scales = np.empty((0, 3))
        self.quats = np.empty((0, 4))
        self.opacities = np.empty(0)
        self.colors = np.empty((0, 3))
        self.object_ids = np.empty(0, dtype=np.int32)
        self.kinds = np.empty(0, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.means)

    def extend(self, primitives: list[GaussianPrimitive]) -> None:
        if not primitives:
            return
        self.means = np.vstack([self.means, [p.mean for p in primitives]])
        self.scales = np.vstack([self.scales, [p.scale for p in primitives]])
        self.quats = np.vstack([self.quats, [p.rotation for p in primitives]])
        self.opacities = np.concatenate([self.opacities, [p.opacity for p in primitives]])
        self.colors = np.vstack([self.colors, [p.color for p in primitives]])
        self.object_ids = np.concatenate(
            [self.object_ids, np.asarray([p.object_id for p in primitives], dtype=np.int32)]
        )
        self.kinds = np.concatenate(
            [self.kinds, np.asarray([p.kind for p in primitives], dtype=np.uint8)]
        )

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            mean=self.means[i].copy(),
            scale=self.scales[i].copy(),
            rotation=self.quats[i].copy(),
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
            object_id=int(self.object_ids[i]),
            kind=int(self.kinds[i]),
        )

    def object_indices(self, object_id: int) -> np.ndarray:
        return np.nonzero(self.object_ids == object_id)[0]

    def present_ids(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.object_ids))

    def rewrite_object_id(self, old_id: int, new_id: int) -> int:
        """Atomically reassign every Gaussian of old_id to new_id (merges)."""
        idx = self.object_ids == old_id
        self.object_ids[idx] = new_id
        return int(np.count_nonzero(idx))

    def clamp_parameters(self) -> None:
        """Enforce opacity class bands, scale range, unit quaternions."""
        opaque = self.kinds == KIND_OPAQUE
        self.opacities[opaque] = np.clip(
            self.opacities[opaque], OPACITY_SPLIT, 1.0 - OPACITY_MARGIN
        )
        self.opacities[~opaque] = np.clip(
            self.opacities[~opaque], OPACITY_MARGIN, OPACITY_SPLIT
        )
        self.scales = np.clip(self.scales, SCALE_MIN, SCALE_MAX)
        self.colors = np.clip(self.colors, 0.0, 1.0)
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        self.quats = self.quats / np.maximum(norms, 1e-12)


def extract_object(store: GaussianStore, object_id: int) -> list[GaussianPrimitive]:
    """All Gaussians of one object, in insertion order; unknown id -> []."""
    return [store.primitive(int(i)) for i in store.object_indices(object_id)]


def export_object_ply(store: GaussianStore, object_id: int, path) -> int:
    """Write one object's Gaussians as a point cloud; returns point count."""
    idx = store.object_indices(object_id)
    write_point_ply(
        path,
        store.means[idx],
        colors=store.colors[idx],
        opacities=store.opacities[idx],
        object_ids=store.object_ids[idx],
    )
    return len(idx)


def import_object_ply(path) -> list[GaussianPrimitive]:
    """Read a point cloud back as (isotropic) Gaussian primitives."""
    data = read_point_ply(path)
    out = []
    for i in range(len(data["points"])):
        opacity = float(data["opacities"][i])
        out.append(
            GaussianPrimitive(
                mean=data["points"][i].astype(float),
                scale=np.full(3, 0.01),
                rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                opacity=opacity,
                color=data["colors"][i].astype(float),
                object_id=int(data["object_ids"][i]),
                kind=KIND_OPAQUE if opacity > OPACITY_SPLIT else KIND_TRANSPARENT,
            )
        )
    return out


@dataclass
class MaskThresholds:
    theta_alpha: float = 0.9   # accumulation below this flags missing geometry
    theta_d: float = 0.1       # meters
    theta_c: float = 0.1       # max per-channel color error
    include_background: bool = False


@dataclass
class UpdateMasks:
    geo_mask: np.ndarray
    rgb_mask: np.ndarray
    per_object: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def masked_counts(self) -> tuple[int, int]:
        return int(np.count_nonzero(self.geo_mask)), int(np.count_nonzero(self.rgb_mask))


def compute_update_masks(frame: FrameBundle, render, thresholds: MaskThresholds) -> UpdateMasks:
    """Flag pixels whose render disagrees with the frame (geometry / color).

    geo: instance accumulation below theta_alpha OR depth error above
    theta_d (only where the observed depth is valid).  rgb: max channel
    error above theta_c.  Both masks are restricted to pixels with a nonzero
    instance id unless include_background is set.
    """
    h, w = frame.shape
    if render.color.shape[:2] != (h, w):
        raise InvalidParameterError(
            f"render size {render.color.shape[:2]} does not match frame {(h, w)}"
        )
    valid_depth = frame.depth > 0
    ins = render.instance
    depth_err = np.abs(frame.depth - render.depth)
    geo = (ins < thresholds.theta_alpha) | (valid_depth & (depth_err > thresholds.theta_d))
    geo &= valid_depth

    color_err = np.max(np.abs(frame.rgb - render.color), axis=2)
    rgb = color_err > thresholds.theta_c

    if not thresholds.include_background:
        fg = frame.instance > 0
        geo &= fg
        rgb &= fg
    rgb &= ~geo  # geometry fixes take precedence at a pixel

    per_object: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    ids = np.unique(frame.instance[(geo | rgb)])
    for k in ids:
        sel = frame.instance == k
        per_object[int(k)] = (
            np.flatnonzero(geo & sel),
            np.flatnonzero(rgb & sel),
        )
    return UpdateMasks(geo_mask=geo, rgb_mask=rgb, per_object=per_object)


@dataclass
class DensifyConfig:
    stride: int = 4
    scale_factor: float = 0.5  # initial scale = depth / fx * stride * factor
    max_new_per_frame: int = 0  # 0 = unlimited; else cap spawns (scan order)


def densify_from_mask(
    frame: FrameBundle, masks: UpdateMasks, render, config: DensifyConfig | None = None
) -> list[GaussianPrimitive]:
    """Spawn Gaussians on a stride grid over the masked pixels.

    Geometry pixels back-project at the observed depth as opaque Gaussians;
    color pixels spawn transparent Gaussians at the rendered surface depth.
    Zero-depth pixels are skipped.
    """
    config = config or DensifyConfig()
    h, w = frame.shape
    stride = max(1, config.stride)
    off = stride // 2
    grid = np.zeros((h, w), dtype=bool)
    grid[off::stride, off::stride] = True

    out: list[GaussianPrimitive] = []
    identity_q = np.array([1.0, 0.0, 0.0, 0.0])

    geo_sel = masks.geo_mask & grid & (frame.depth > 0)
    ys, xs = np.nonzero(geo_sel)
    if len(xs):
        depths = frame.depth[ys, xs]
        pts = frame.camera.backproject(np.stack([xs + 0.5, ys + 0.5], axis=1), depths)
        scales = depths / frame.camera.fx * stride * config.scale_factor
        for j in range(len(xs)):
            out.append(
                GaussianPrimitive(
                    mean=pts[j],
                    scale=np.full(3, max(scales[j], SCALE_MIN)),
                    rotation=identity_q.copy(),
                    opacity=OPAQUE_INIT_OPACITY,
                    color=frame.rgb[ys[j], xs[j]].astype(float),
                    object_id=int(frame.instance[ys[j], xs[j]]),
                    kind=KIND_OPAQUE,
                )
            )

    rgb_sel = masks.rgb_mask & grid & ~geo_sel
    ys, xs = np.nonzero(rgb_sel)
    if len(xs):
        rendered_depth = render.depth[ys, xs]
        usable = rendered_depth > 0
        ys, xs, rendered_depth = ys[usable], xs[usable], rendered_depth[usable]
        pts = frame.camera.backproject(
            np.stack([xs + 0.5, ys + 0.5], axis=1), rendered_depth
        )
        scales = rendered_depth / frame.camera.fx * stride * config.scale_factor
        for j in range(len(xs)):
            out.append(
                GaussianPrimitive(
                    mean=pts[j],
                    scale=np.full(3, max(scales[j], SCALE_MIN)),
                    rotation=identity_q.copy(),
                    opacity=TRANSPARENT_INIT_OPACITY,
                    color=frame.rgb[ys[j], xs[j]].astype(float),
                    object_id=int(frame.instance[ys[j], xs[j]]),
                    kind=KIND_TRANSPARENT,
                )
            )
    if config.max_new_per_frame > 0:
        out = out[: config.max_new_per_frame]
    return out


def select_trainable(
    store: GaussianStore,
    masks: UpdateMasks,
    object_id: int,
    camera: CameraModel,
    lowpass: float = 0.3,
) -> np.ndarray:
    """Indices of the object's Gaussians whose 3-sigma footprint hits its mask.

    Unknown object ids (or objects with no masked pixels) yield an empty set;
    everything not returned stays frozen for this frame.
    """
    idx = store.object_indices(object_id)
    if len(idx) == 0 or object_id not in masks.per_object:
        return np.empty(0, dtype=int)
    geo_px, rgb_px = masks.per_object[object_id]
    all_px = np.concatenate([geo_px, rgb_px])
    if len(all_px) == 0:
        return np.empty(0, dtype=int)

    h, w = masks.geo_mask.shape
    obj_mask = np.zeros(h * w, dtype=bool)
    obj_mask[all_px] = True
    obj_mask = obj_mask.reshape(h, w)
    # summed-area table for O(1) "any masked pixel in rect" queries
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(obj_mask, axis=0), axis=1)

    from .renderer import project_gaussian_subset

    proj = project_gaussian_subset(store, idx, camera, lowpass=lowpass)
    selected = []
    for row, i in enumerate(idx):
        if not proj["valid"][row]:
            continue
        u, v = proj["means2d"][row]
        r = proj["radii"][row]
        x0 = int(np.clip(np.floor(u - r), 0, w))
        x1 = int(np.clip(np.ceil(u + r) + 1, 0, w))
        y0 = int(np.clip(np.floor(v - r), 0, h))
        y1 = int(np.clip(np.ceil(v + r) + 1, 0, h))
        if x1 <= x0 or y1 <= y0:
            continue
        count = (
            integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
        )
        if count > 0:
            selected.append(int(i))
    return np.asarray(selected, dtype=int)
