"""Per-frame orchestration: associate, densify, optimize, evaluate, export.

The coordinator owns the object map and the Gaussian store.  Each frame is
processed as: associate detections to tracks (spawning / merging as needed),
re-id merged Gaussians, periodically refine track quadrics against their
observation histories, then render, mask, densify and optimize the Gaussians
of each masked object.  Per-object optimizations run against a frame-start
snapshot and are committed in ascending object id, so results are identical
for any worker count.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .association import AssocConfig, ObjectMap, associate_frame
from .errors import DatasetError, InvalidParameterError, UnoptimizableError
from .frames import FrameBundle, dominant_instance_id
from .gaussians import (
    DensifyConfig,
    GaussianStore,
    MaskThresholds,
    compute_update_masks,
    densify_from_mask,
    export_object_ply,
    select_trainable,
)
from .quadric_fit import OptimConfig, optimize_quadric
from .quadrics import DualQuadric, conic_to_bbox, iou_2d, iou_3d, project_to_conic
from .renderer import TrainConfig, render
from .simulator import load, quat_to_rotation, _rotation_to_quat

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Every tunable of the mapping loop; serializable as flat JSON."""

    # association
    assoc_mode: str = "qd+iou"
    iou_gate: float = 0.3
    qd_accept: float = 0.6
    tau: float = 1.0
    t_thre: float = 0.85
    merge_d: float = 0.1
    merge_fragments: bool = True
    merge_duplicates: bool = True
    merge_duplicate_raw: float = 0.1
    merge_iou3d: float = 0.2
    # update masks
    theta_alpha: float = 0.9
    theta_d: float = 0.1
    theta_c: float = 0.1
    include_background: bool = False
    # gaussians
    enable_gaussians: bool = True
    og_opacity: float = 0.9
    tg_opacity: float = 0.1
    stride: int = 4
    max_new_per_frame: int = 0
    gaussian_iters: int = 30
    lam: float = 0.5
    lr_mean: float = 0.004
    lr_color: float = 0.04
    lr_opacity: float = 0.02
    optimize_scale_rot: bool = False
    train_all: bool = False
    # quadric optimization
    quadric_min_obs: int = 3
    quadric_every: int = 10
    quadric_iters: int = 60
    quadric_final_iters: int = 200
    yaw_only: bool = False
    # runtime
    workers: int = 1
    seed: int = 0

    def assoc(self) -> AssocConfig:
        return AssocConfig(
            mode=self.assoc_mode,
            iou_gate=self.iou_gate,
            qd_accept=self.qd_accept,
            tau=self.tau,
            t_thre=self.t_thre,
            merge_d=self.merge_d,
            merge_fragments=self.merge_fragments,
            merge_duplicates=self.merge_duplicates,
            merge_duplicate_raw=self.merge_duplicate_raw,
            merge_iou3d=self.merge_iou3d,
        )

    def thresholds(self) -> MaskThresholds:
        return MaskThresholds(
            theta_alpha=self.theta_alpha,
            theta_d=self.theta_d,
            theta_c=self.theta_c,
            include_background=self.include_background,
        )

    def densify(self) -> DensifyConfig:
        return DensifyConfig(stride=self.stride, max_new_per_frame=self.max_new_per_frame)

    def training(self, iters: int | None = None) -> TrainConfig:
        return TrainConfig(
            iters=self.gaussian_iters if iters is None else iters,
            lam=self.lam,
            lr_mean=self.lr_mean,
            lr_color=self.lr_color,
            lr_opacity=self.lr_opacity,
            optimize_scale_rot=self.optimize_scale_rot,
        )

    def quadric_optim(self, iters: int | None = None) -> OptimConfig:
        return OptimConfig(
            max_iters=self.quadric_iters if iters is None else iters,
            min_obs=self.quadric_min_obs,
            yaw_only=self.yaw_only,
        )

    def to_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "PipelineConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidParameterError(f"cannot read config {path}: {e}") from e
        known = {f_.name for f_ in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class FrameLog:
    index: int
    matches: int
    new_tracks: int
    merges: int
    live_tracks: int
    gaussians: int
    trainable: int
    assoc_seconds: float
    quadric_seconds: float
    mapping_seconds: float


@dataclass
class PipelineResult:
    object_map: ObjectMap
    store: GaussianStore
    logs: list[FrameLog]
    config: PipelineConfig

    def track_count(self) -> int:
        return len(self.object_map)


def _optimize_dirty_tracks(obj_map: ObjectMap, dirty: list[int],
                           config: PipelineConfig, iters: int | None = None) -> None:
    """Refine quadrics of the given tracks; parallel-safe, committed by id."""
    tracks = [obj_map.tracks[t] for t in sorted(dirty) if t in obj_map.tracks]
    jobs = []
    for track in tracks:
        if track.quadric is None or len(track.observations) < config.quadric_min_obs:
            continue
        obs = [(o.bbox, o.camera) for o in track.observations]
        jobs.append((track, obs))
    if not jobs:
        return

    def run(job):
        track, obs = job
        try:
            return optimize_quadric(track.quadric, obs, config.quadric_optim(iters))
        except UnoptimizableError as e:
            logger.warning("track %d: pose optimization failed (%s), continuing",
                           track.object_id, e)
            return None

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for (track, _), res in zip(jobs, results):
        if res is not None and res.loss <= res.initial_loss:
            track.quadric = res.params.to_quadric()


def run_pipeline(dataset_dir: str, config: PipelineConfig | None = None):
    """Process a dataset; returns PipelineResult with per-frame logs."""
    config = config or PipelineConfig()
    obj_map = ObjectMap()
    store = GaussianStore()
    logs: list[FrameLog] = []
    assoc_cfg = config.assoc()
    thresholds = config.thresholds()
    densify_cfg = config.densify()

    seen_instance_ids: set[int] = set()
    for frame in load(dataset_dir):
        t0 = time.perf_counter()
        result = associate_frame(obj_map, frame, assoc_cfg)
        for det in frame.detections:
            k = dominant_instance_id(frame, det.bbox)
            if k > 0:
                seen_instance_ids.add(k)
        t_assoc = time.perf_counter() - t0

        t0 = time.perf_counter()
        if config.quadric_every > 0 and frame.index % config.quadric_every == config.quadric_every - 1:
            dirty = [tid for tid, _ in result.matches]
            _optimize_dirty_tracks(obj_map, dirty, config)
        t_quadric = time.perf_counter() - t0

        t0 = time.perf_counter()
        trainable_total = 0
        if config.enable_gaussians:
            trainable_total = _map_frame(
                store, frame, config, thresholds, densify_cfg, seen_instance_ids
            )
        t_map = time.perf_counter() - t0

        logs.append(
            FrameLog(
                index=frame.index,
                matches=len(result.matches),
                new_tracks=len(result.new_tracks),
                merges=len(result.merges),
                live_tracks=len(obj_map),
                gaussians=len(store),
                trainable=trainable_total,
                assoc_seconds=t_assoc,
                quadric_seconds=t_quadric,
                mapping_seconds=t_map,
            )
        )

    if config.quadric_final_iters > 0:
        _optimize_dirty_tracks(
            obj_map, list(obj_map.tracks), config, iters=config.quadric_final_iters
        )
    return PipelineResult(object_map=obj_map, store=store, logs=logs, config=config)


def _map_frame(store: GaussianStore, frame: FrameBundle, config: PipelineConfig,
               thresholds: MaskThresholds, densify_cfg: DensifyConfig,
               seen_instance_ids: set[int]) -> int:
    """Render -> masks -> densify -> per-object optimize; returns trainable count.

    Only instance ids that have produced at least one detection are mapped:
    without observations an object stays out of the Gaussian store entirely.
    """
    from .renderer import optimize_object

    out = render(store, frame.camera, instance_ref=frame.instance)
    masks = compute_update_masks(frame, out, thresholds)
    allowed = set(seen_instance_ids)
    if config.include_background:
        allowed.add(0)
    _restrict_masks_to_ids(masks, frame, allowed)
    new = densify_from_mask(frame, masks, out, densify_cfg)
    for p in new:
        p.opacity = config.og_opacity if p.kind == 0 else config.tg_opacity
    store.extend(new)

    if config.train_all:
        # ablation mode: every object's gaussians train every frame
        object_ids = sorted(k for k in store.present_ids() if k != 0 or config.include_background)
    else:
        object_ids = sorted(k for k in masks.per_object if k != 0 or config.include_background)
    selections: dict[int, np.ndarray] = {}
    for k in object_ids:
        if config.train_all:
            sel = store.object_indices(k)
        else:
            sel = select_trainable(store, masks, k, frame.camera)
        if len(sel):
            selections[k] = sel
    if not selections:
        return 0

    # every object trains against the same frame-start snapshot; results are
    # committed in ascending id order so any worker count gives identical maps
    train_cfg = config.training()
    snapshot = _copy_store(store)

    def run(k):
        local = _copy_store(snapshot)
        optimize_object(local, k, [frame], selections[k], train_cfg)
        sel = selections[k]
        return k, {
            "means": local.means[sel],
            "colors": local.colors[sel],
            "opacities": local.opacities[sel],
            "scales": local.scales[sel],
            "quats": local.quats[sel],
        }

    order = sorted(selections)
    if config.workers > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = dict(pool.map(run, order))
    else:
        results = dict(run(k) for k in order)
    for k in order:
        sel = selections[k]
        store.means[sel] = results[k]["means"]
        store.colors[sel] = results[k]["colors"]
        store.opacities[sel] = results[k]["opacities"]
        store.scales[sel] = results[k]["scales"]
        store.quats[sel] = results[k]["quats"]
    return sum(len(s) for s in selections.values())


def _restrict_masks_to_ids(masks, frame: FrameBundle, allowed: set[int]) -> None:
    """Drop mask pixels of instance ids that have never been detected."""
    disallowed = [k for k in masks.per_object if k not in allowed]
    if not disallowed:
        return
    bad = np.isin(frame.instance, list(disallowed))
    masks.geo_mask &= ~bad
    masks.rgb_mask &= ~bad
    for k in disallowed:
        masks.per_object.pop(k, None)


def _copy_store(store: GaussianStore) -> GaussianStore:
    out = GaussianStore()
    out.means = store.means.copy()
    out.scales = store.scales.copy()
    out.quats = store.quats.copy()
    out.opacities = store.opacities.copy()
    out.colors = store.colors.copy()
    out.object_ids = store.object_ids.copy()
    out.kinds = store.kinds.copy()
    return out


# ---------------------------------------------------------------------------
# State serialization


def save_state(result: PipelineResult, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    tracks = []
    for track in result.object_map.live_tracks():
        entry = {
            "object_id": track.object_id,
            "class_id": track.class_id,
            "status": track.status,
            "last_seen": track.last_seen,
            "n_observations": len(track.observations),
        }
        if track.quadric is not None:
            entry["center"] = track.quadric.center.tolist()
            entry["rotation_wxyz"] = _rotation_to_quat(track.quadric.rotation).tolist()
            entry["semi_axes"] = track.quadric.semi_axes.tolist()
        tracks.append(entry)
    state = {
        "tracks": tracks,
        "retired_ids": sorted(result.object_map.retired_ids),
        "next_id": result.object_map._next_id,
        "config": asdict(result.config),
        "frame_logs": [asdict(lg) for lg in result.logs],
    }
    with open(os.path.join(out_dir, "state.json"), "w") as f:
        json.dump(state, f, indent=1, sort_keys=True)
        f.write("\n")
    s = result.store
    np.savez(
        os.path.join(out_dir, "gaussians.npz"),
        means=s.means, scales=s.scales, quats=s.quats,
        opacities=s.opacities, colors=s.colors,
        object_ids=s.object_ids, kinds=s.kinds,
    )
    return out_dir


def load_state(state_dir: str) -> PipelineResult:
    path = os.path.join(state_dir, "state.json")
    if not os.path.isfile(path):
        raise DatasetError(f"missing state file: {path}")
    with open(path) as f:
        state = json.load(f)
    obj_map = ObjectMap()
    for entry in state["tracks"]:
        track = obj_map.new_track(entry["class_id"])
        # preserve original ids
        obj_map.tracks.pop(track.object_id)
        track.object_id = entry["object_id"]
        obj_map.tracks[track.object_id] = track
        track.status = entry["status"]
        track.last_seen = entry["last_seen"]
        if "center" in entry:
            track.quadric = DualQuadric(
                np.asarray(entry["center"]),
                quat_to_rotation(entry["rotation_wxyz"]),
                np.asarray(entry["semi_axes"]),
            )
    obj_map._next_id = state["next_id"]
    obj_map.retired_ids = set(state.get("retired_ids", []))
    store = GaussianStore()
    gz = os.path.join(state_dir, "gaussians.npz")
    if os.path.isfile(gz):
        data = np.load(gz)
        store.means = data["means"]
        store.scales = data["scales"]
        store.quats = data["quats"]
        store.opacities = data["opacities"]
        store.colors = data["colors"]
        store.object_ids = data["object_ids"].astype(np.int32)
        store.kinds = data["kinds"].astype(np.uint8)
    config = PipelineConfig(**state.get("config", {}))
    logs = [FrameLog(**lg) for lg in state.get("frame_logs", [])]
    return PipelineResult(object_map=obj_map, store=store, logs=logs, config=config)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class ObjectPoseEval:
    gt_id: int
    track_id: int | None
    iou_3d: float
    iou_2d: float
    cde_cm: float | None


@dataclass
class EvalReport:
    per_object: list[ObjectPoseEval] = field(default_factory=list)
    mean_iou_3d: float = 0.0
    mean_iou_2d: float = 0.0
    mean_cde_cm: float = 0.0
    accuracy_cm: float | None = None
    completion_cm: float | None = None
    completion_ratio_pct: float | None = None
    track_count: int = 0
    gt_count: int = 0
    mean_tracking_seconds: float = 0.0
    mean_mapping_seconds: float = 0.0
    fps: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def table(self) -> str:
        lines = ["object  track   3D-IoU   2D-IoU   CDE(cm)"]
        for o in self.per_object:
            cde = f"{o.cde_cm:8.2f}" if o.cde_cm is not None else "    miss"
            tid = f"{o.track_id:5d}" if o.track_id is not None else " none"
            lines.append(f"{o.gt_id:6d}  {tid}  {o.iou_3d:7.3f}  {o.iou_2d:7.3f}  {cde}")
        lines.append(
            f"mean    3D-IoU {self.mean_iou_3d:.3f}  2D-IoU {self.mean_iou_2d:.3f}  "
            f"CDE {self.mean_cde_cm:.2f} cm"
        )
        lines.append(f"tracks {self.track_count} vs GT {self.gt_count}")
        if self.accuracy_cm is not None:
            lines.append(
                f"recon: acc {self.accuracy_cm:.2f} cm  comp {self.completion_cm:.2f} cm  "
                f"ratio {self.completion_ratio_pct:.1f}%"
            )
        if self.fps > 0:
            lines.append(
                f"runtime: tracking {self.mean_tracking_seconds*1e3:.1f} ms/frame  "
                f"mapping {self.mean_mapping_seconds*1e3:.1f} ms/frame  {self.fps:.2f} fps"
            )
        return "\n".join(lines)


def _visible_bbox(quadric: DualQuadric, camera) -> object | None:
    from .errors import BehindCameraError, DegenerateConicError

    try:
        box = conic_to_bbox(project_to_conic(quadric, camera))
    except (BehindCameraError, DegenerateConicError):
        return None
    if box.x_max < 0 or box.y_max < 0 or box.x_min > camera.width or box.y_min > camera.height:
        return None
    return box


def eval_pose(result: PipelineResult, gt: dict, cameras: list) -> EvalReport:
    """Greedy 3D-IoU matching of tracks to GT, then pose metrics.

    Unmatched GT objects count as misses with IoU 0 and no CDE; mean CDE
    averages matched objects only.
    """
    tracks = [t for t in result.object_map.live_tracks() if t.quadric is not None]
    gt_objects = gt["objects"]
    pairs = []
    for g in gt_objects:
        for t in tracks:
            pairs.append((iou_3d(g["quadric"], t.quadric), g["id"], t.object_id))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    matched_gt: dict[int, int] = {}
    used_tracks: set[int] = set()
    for score, gid, tid in pairs:
        if gid in matched_gt or tid in used_tracks or score <= 0.0:
            continue
        matched_gt[gid] = tid
        used_tracks.add(tid)

    track_by_id = {t.object_id: t for t in tracks}
    per_object = []
    for g in gt_objects:
        gid = g["id"]
        tid = matched_gt.get(gid)
        if tid is None:
            per_object.append(ObjectPoseEval(gid, None, 0.0, 0.0, None))
            continue
        tq = track_by_id[tid].quadric
        i3 = iou_3d(g["quadric"], tq)
        i2s = []
        for cam in cameras:
            gt_box = _visible_bbox(g["quadric"], cam)
            if gt_box is None:
                continue
            est_box = _visible_bbox(tq, cam)
            i2s.append(0.0 if est_box is None else iou_2d(gt_box, est_box))
        i2 = float(np.mean(i2s)) if i2s else 0.0
        cde = float(np.linalg.norm(np.asarray(g["quadric"].center) - tq.center) * 100.0)
        per_object.append(ObjectPoseEval(gid, tid, i3, i2, cde))

    cdes = [o.cde_cm for o in per_object if o.cde_cm is not None]
    report = EvalReport(
        per_object=per_object,
        mean_iou_3d=float(np.mean([o.iou_3d for o in per_object])) if per_object else 0.0,
        mean_iou_2d=float(np.mean([o.iou_2d for o in per_object])) if per_object else 0.0,
        mean_cde_cm=float(np.mean(cdes)) if cdes else 0.0,
        track_count=result.track_count(),
        gt_count=len(gt_objects),
    )
    if result.logs:
        t_track = float(np.mean([lg.assoc_seconds + lg.quadric_seconds for lg in result.logs]))
        t_map = float(np.mean([lg.mapping_seconds for lg in result.logs]))
        report.mean_tracking_seconds = t_track
        report.mean_mapping_seconds = t_map
        total = t_track + t_map
        report.fps = 1.0 / total if total > 0 else 0.0
    return report


def eval_recon(
    est_points: np.ndarray, gt_points: np.ndarray, threshold_cm: float = 5.0
) -> tuple[float, float, float]:
    """(Accuracy cm, Completion cm, Completion-Ratio %) via exact NN search."""
    from scipy.spatial import cKDTree

    est = np.asarray(est_points, dtype=float)
    gt = np.asarray(gt_points, dtype=float)
    if len(est) == 0 or len(gt) == 0:
        raise InvalidParameterError("eval_recon requires non-empty point sets")
    d_est_gt = cKDTree(gt).query(est, k=1)[0]
    d_gt_est = cKDTree(est).query(gt, k=1)[0]
    accuracy = float(d_est_gt.mean() * 100.0)
    completion = float(d_gt_est.mean() * 100.0)
    ratio = float(np.mean(d_gt_est * 100.0 < threshold_cm) * 100.0)
    return accuracy, completion, ratio


def export_objects(result: PipelineResult, out_dir: str) -> dict:
    """One PLY per object id plus a manifest; returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    track_by_id = {t.object_id: t for t in result.object_map.live_tracks()}
    ids = sorted(set(result.store.present_ids()) - {0} | set(track_by_id))
    manifest = {"objects": []}
    for k in ids:
        ply_name = f"object_{k:03d}.ply"
        count = export_object_ply(result.store, k, os.path.join(out_dir, ply_name))
        entry = {"id": k, "gaussians": count, "ply": ply_name}
        track = track_by_id.get(k)
        if track is not None:
            entry["class_id"] = track.class_id
            if track.quadric is not None:
                entry["center"] = track.quadric.center.tolist()
                entry["rotation_wxyz"] = _rotation_to_quat(track.quadric.rotation).tolist()
                entry["semi_axes"] = track.quadric.semi_axes.tolist()
        manifest["objects"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def dataset_cameras(dataset_dir: str) -> list:
    """All frame cameras of a dataset (poses only, images not decoded)."""
    cams = []
    for frame in load(dataset_dir):
        cams.append(frame.camera)
    return cams
