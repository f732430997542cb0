import numpy as np
import pytest

from objmap.errors import InvalidParameterError
from objmap.frames import FrameBundle
from objmap.gaussians import (
    KIND_OPAQUE,
    KIND_TRANSPARENT,
    DensifyConfig,
    GaussianPrimitive,
    GaussianStore,
    MaskThresholds,
    compute_update_masks,
    densify_from_mask,
    export_object_ply,
    extract_object,
    import_object_ply,
    select_trainable,
)
from objmap.quadrics import CameraModel
from objmap.renderer import RenderOutput, render
from objmap.simulator import ObjectSpec, OrbitTrajectory, SceneSpec, frame_bundles


def camera(w=80, h=60, f=70.0):
    return CameraModel(fx=f, fy=f, cx=w / 2, cy=h / 2, width=w, height=h)


def synthetic_frame(cam, depth_value=2.0, object_box=None):
    h, w = cam.height, cam.width
    rgb = np.full((h, w, 3), 0.5)
    depth = np.full((h, w), depth_value)
    instance = np.zeros((h, w), dtype=np.int32)
    if object_box:
        x0, y0, x1, y1 = object_box
        instance[y0:y1, x0:x1] = 1
    return FrameBundle(rgb=rgb, depth=depth, instance=instance, camera=cam,
                       detections=[], index=0)


def perfect_render(frame):
    h, w = frame.shape
    return RenderOutput(
        color=frame.rgb.copy(),
        depth=frame.depth.copy(),
        instance=np.ones((h, w)),
        alpha=np.ones((h, w)) * 0.99,
        transmittance=np.ones((h, w)) * 0.01,
    )


def empty_render(frame):
    h, w = frame.shape
    return RenderOutput(
        color=np.zeros((h, w, 3)),
        depth=np.zeros((h, w)),
        instance=np.zeros((h, w)),
        alpha=np.zeros((h, w)),
        transmittance=np.ones((h, w)),
    )


class TestStore:
    def test_extend_and_extract(self):
        store = GaussianStore()
        prims = [
            GaussianPrimitive(np.zeros(3), np.full(3, 0.01), np.array([1.0, 0, 0, 0]),
                              0.9, np.zeros(3), object_id=1)
            for _ in range(10)
        ] + [
            GaussianPrimitive(np.ones(3), np.full(3, 0.01), np.array([1.0, 0, 0, 0]),
                              0.9, np.ones(3), object_id=2)
            for _ in range(5)
        ]
        store.extend(prims)
        assert len(extract_object(store, 2)) == 5
        assert len(extract_object(store, 1)) == 10
        assert extract_object(store, 99) == []

    def test_partition_property(self):
        store = GaussianStore()
        rng = np.random.default_rng(0)
        prims = [
            GaussianPrimitive(rng.normal(size=3), np.full(3, 0.01),
                              np.array([1.0, 0, 0, 0]), 0.9, rng.uniform(0, 1, 3),
                              object_id=int(rng.integers(0, 4)))
            for _ in range(40)
        ]
        store.extend(prims)
        total = sum(len(extract_object(store, k)) for k in store.present_ids())
        assert total == len(store)

    def test_rewrite_object_id_atomic(self):
        store = GaussianStore()
        store.extend([
            GaussianPrimitive(np.zeros(3), np.full(3, 0.01), np.array([1.0, 0, 0, 0]),
                              0.9, np.zeros(3), object_id=3)
            for _ in range(7)
        ])
        moved = store.rewrite_object_id(3, 8)
        assert moved == 7
        assert len(extract_object(store, 3)) == 0
        assert len(extract_object(store, 8)) == 7

    def test_clamp_keeps_classes(self):
        store = GaussianStore()
        store.extend([
            GaussianPrimitive(np.zeros(3), np.full(3, 0.01), np.array([1.0, 0, 0, 0]),
                              0.9, np.zeros(3), object_id=1, kind=KIND_OPAQUE),
            GaussianPrimitive(np.zeros(3), np.full(3, 0.01), np.array([1.0, 0, 0, 0]),
                              0.1, np.zeros(3), object_id=1, kind=KIND_TRANSPARENT),
        ])
        store.opacities[0] = 0.2   # drifted below the class band
        store.opacities[1] = 0.8   # drifted above
        store.clamp_parameters()
        assert store.opacities[0] >= 0.5
        assert store.opacities[1] <= 0.5


class TestMasks:
    def test_perfect_render_empty_masks(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(10, 10, 40, 40))
        masks = compute_update_masks(frame, perfect_render(frame), MaskThresholds())
        assert masks.masked_counts() == (0, 0)

    def test_fresh_map_masks_all_object_pixels(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(10, 10, 40, 40))
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        assert np.count_nonzero(masks.geo_mask) == 30 * 30
        assert set(masks.per_object) == {1}

    def test_include_background_widens_geo(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(10, 10, 40, 40))
        masks = compute_update_masks(
            frame, empty_render(frame), MaskThresholds(include_background=True)
        )
        assert np.count_nonzero(masks.geo_mask) == 80 * 60

    def test_threshold_arithmetic(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(0, 0, 80, 60))
        render_out = perfect_render(frame)
        render_out.depth[5, 5] += 0.05        # below theta_d: fine
        render_out.depth[6, 6] += 0.2         # above theta_d: geo
        render_out.instance[7, 7] = 0.95      # fine
        render_out.instance[8, 8] = 0.5       # below theta_alpha: geo
        render_out.color[9, 9, 0] += 0.2      # above theta_c: rgb
        masks = compute_update_masks(frame, render_out, MaskThresholds())
        assert not masks.geo_mask[5, 5]
        assert masks.geo_mask[6, 6]
        assert not masks.geo_mask[7, 7]
        assert masks.geo_mask[8, 8]
        assert masks.rgb_mask[9, 9]
        assert not masks.geo_mask[9, 9]

    def test_invalid_depth_excluded(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(0, 0, 80, 60))
        frame.depth[20, 20] = 0.0
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        assert not masks.geo_mask[20, 20]

    def test_dimension_mismatch_rejected(self):
        cam = camera()
        frame = synthetic_frame(cam)
        other = synthetic_frame(camera(w=40, h=30))
        with pytest.raises(InvalidParameterError):
            compute_update_masks(frame, empty_render(other), MaskThresholds())


class TestDensify:
    def test_count_matches_stride_grid(self):
        # 100x100 object at stride 4 -> about 625 opaque gaussians
        cam = camera(w=160, h=120, f=100.0)
        frame = synthetic_frame(cam, object_box=(10, 10, 110, 110))
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        new = densify_from_mask(frame, masks, empty_render(frame), DensifyConfig(stride=4))
        assert len(new) == pytest.approx(625, abs=60)
        assert all(p.object_id == 1 for p in new)
        assert all(p.kind == KIND_OPAQUE for p in new)
        assert all(p.opacity == 0.9 for p in new)

    def test_empty_masks_no_spawn(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(10, 10, 40, 40))
        masks = compute_update_masks(frame, perfect_render(frame), MaskThresholds())
        assert densify_from_mask(frame, masks, perfect_render(frame), DensifyConfig()) == []

    def test_backprojection_at_principal_point(self):
        cam = camera(w=80, h=60, f=100.0)
        frame = synthetic_frame(cam, depth_value=2.0, object_box=(0, 0, 80, 60))
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        new = densify_from_mask(frame, masks, empty_render(frame), DensifyConfig(stride=2))
        # gaussian spawned at the principal point pixel: mean on the optical axis
        best = min(new, key=lambda p: abs(p.mean[0]) + abs(p.mean[1]))
        assert np.allclose(best.mean[2], 2.0, atol=1e-9)
        assert abs(best.mean[0]) < 2.0 / 100.0  # within one pixel of the axis

    def test_zero_depth_pixels_skipped(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(0, 0, 80, 60))
        frame.depth[:, :40] = 0.0
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        new = densify_from_mask(frame, masks, empty_render(frame), DensifyConfig(stride=2))
        px, _ = frame.camera.project_points(np.array([p.mean for p in new]))
        assert np.all(px[:, 0] >= 39.0)

    def test_transparent_spawned_at_rendered_depth(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(0, 0, 80, 60))
        rout = perfect_render(frame)
        rout.color[:, :, 0] += 0.3  # color error everywhere -> rgb mask
        rout.depth[:] = 1.95        # within theta_d, so not a geometry error
        masks = compute_update_masks(frame, rout, MaskThresholds())
        assert masks.masked_counts()[0] == 0  # no geo pixels
        new = densify_from_mask(frame, masks, rout, DensifyConfig(stride=4))
        tg = [p for p in new if p.kind == KIND_TRANSPARENT]
        assert tg
        assert all(p.opacity == 0.1 for p in tg)
        cam_depth = np.array([cam.to_camera(p.mean)[0, 2] for p in tg])
        assert np.allclose(cam_depth, 1.95, atol=1e-9)

    def test_spawn_budget(self):
        cam = camera()
        frame = synthetic_frame(cam, object_box=(0, 0, 80, 60))
        masks = compute_update_masks(frame, empty_render(frame), MaskThresholds())
        new = densify_from_mask(frame, masks, empty_render(frame),
                                DensifyConfig(stride=1, max_new_per_frame=100))
        assert len(new) == 100


class TestSelectTrainable:
    def _scene_with_two_objects(self):
        spec = SceneSpec(
            objects=[
                ObjectSpec(class_id=1, shape="sphere", center=(-0.5, 0, 0.4),
                           semi_axes=(0.25, 0.25, 0.25)),
                ObjectSpec(class_id=2, shape="box", center=(0.6, 0, 0.3),
                           semi_axes=(0.2, 0.2, 0.3)),
            ],
            n_frames=1, width=120, height=90, fx=90, fy=90,
            trajectory=OrbitTrajectory(target=(0, 0, 0.35), radius=2.0, height=1.0),
        )
        bundle, _ = next(frame_bundles(spec))
        store = GaussianStore()
        out = empty_render(bundle)
        masks = compute_update_masks(bundle, out, MaskThresholds())
        store.extend(densify_from_mask(bundle, masks, out, DensifyConfig(stride=2)))
        return bundle, store

    def test_empty_masks_select_nothing(self):
        bundle, store = self._scene_with_two_objects()
        pr = perfect_render(bundle)
        masks = compute_update_masks(bundle, pr, MaskThresholds())
        for k in (1, 2):
            assert len(select_trainable(store, masks, k, bundle.camera)) == 0

    def test_full_mask_selects_visible_gaussians(self):
        bundle, store = self._scene_with_two_objects()
        masks = compute_update_masks(bundle, empty_render(bundle), MaskThresholds())
        sel = select_trainable(store, masks, 1, bundle.camera)
        assert len(sel) == len(store.object_indices(1))

    def test_disjoint_objects_never_cross_select(self):
        bundle, store = self._scene_with_two_objects()
        masks = compute_update_masks(bundle, empty_render(bundle), MaskThresholds())
        # mask only object 1's pixels
        masks.per_object.pop(2, None)
        sel1 = set(select_trainable(store, masks, 1, bundle.camera).tolist())
        sel2 = set(select_trainable(store, masks, 2, bundle.camera).tolist())
        ids = store.object_ids
        assert all(ids[i] == 1 for i in sel1)
        assert sel2 == set()

    def test_unknown_object_empty(self):
        bundle, store = self._scene_with_two_objects()
        masks = compute_update_masks(bundle, empty_render(bundle), MaskThresholds())
        assert len(select_trainable(store, masks, 42, bundle.camera)) == 0


class TestPlyRoundtrip:
    def test_export_import_exact(self, tmp_path):
        store = GaussianStore()
        rng = np.random.default_rng(1)
        store.extend([
            GaussianPrimitive(rng.normal(size=3), np.full(3, 0.02),
                              np.array([1.0, 0, 0, 0]), 0.9, rng.uniform(0, 1, 3),
                              object_id=4)
            for _ in range(20)
        ])
        path = tmp_path / "obj4.ply"
        n = export_object_ply(store, 4, path)
        assert n == 20
        back = import_object_ply(path)
        assert len(back) == 20
        # float32 payload round-trips bit-exactly on re-export
        store2 = GaussianStore()
        store2.extend(back)
        path2 = tmp_path / "obj4_again.ply"
        export_object_ply(store2, 4, path2)
        assert path.read_bytes() == path2.read_bytes()
        assert np.allclose(store.means[store.object_indices(4)],
                           np.array([p.mean for p in back]), atol=1e-6)
