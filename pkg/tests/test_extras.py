"""Supplementary coverage: rotation/scale gradients, PNG row filters,
quadric-only association, config wiring."""

import struct
import zlib

import numpy as np
import pytest

from objmap.association import AssocConfig, ObjectMap, associate_frame
from objmap.frames import Detection2D, FrameBundle
from objmap.gaussians import KIND_OPAQUE, GaussianPrimitive, GaussianStore
from objmap.pipeline import PipelineConfig
from objmap.png import read_png, write_png
from objmap.quadrics import BBox2D, CameraModel, DualQuadric, conic_to_bbox, project_to_conic
from objmap.renderer import loss_and_gradients, render


def camera_64():
    return CameraModel(fx=80.0, fy=80.0, cx=32.0, cy=32.0, width=64, height=64)


def gradcheck_frame(store, cam):
    out = render(store, cam)
    h, w = cam.height, cam.width
    xx, yy = np.meshgrid(np.arange(w), np.arange(h))
    return FrameBundle(
        rgb=np.stack([0.5 + 0.3 * np.sin(2 * np.pi * xx / 17),
                      0.5 + 0.3 * np.cos(2 * np.pi * yy / 23),
                      np.ones((h, w))], axis=2),
        depth=np.where(out.alpha > 0.5, out.depth + 0.5, 0.0),
        instance=np.where(out.instance > 0.5, 1, 0).astype(np.int32),
        camera=cam, detections=[], index=0,
    )


class TestRotationScaleGradients:
    def _scene(self, seed):
        rng = np.random.default_rng(seed)
        store = GaussianStore()
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        store.extend([
            GaussianPrimitive(
                mean=np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 2.0]),
                scale=rng.uniform(0.04, 0.12, 3),
                rotation=q,
                opacity=rng.uniform(0.5, 0.9),
                color=rng.uniform(0.2, 0.8, 3),
                object_id=1,
                kind=KIND_OPAQUE,
            )
        ])
        return store

    @pytest.mark.parametrize("seed", [9, 19, 29])
    def test_quaternion_gradient_matches_fd(self, seed):
        cam = camera_64()
        store = self._scene(seed)
        frame = gradcheck_frame(store, cam)
        _, grads, _ = loss_and_gradients(store, np.arange(1), frame, lam=0.5, object_id=1)

        def fd_loss():
            l, _, _ = loss_and_gradients(store, np.empty(0, int), frame, lam=0.5, object_id=1)
            return l

        h = 1e-5
        fd = np.zeros(4)
        for j in range(4):
            store.quats[0, j] += h
            lp = fd_loss()
            store.quats[0, j] -= 2 * h
            lm = fd_loss()
            store.quats[0, j] += h
            fd[j] = (lp - lm) / (2 * h)
        # the forward normalizes the quaternion, so the comparable part of
        # the FD gradient is its tangential projection
        qn = store.quats[0] / np.linalg.norm(store.quats[0])
        fd_tan = fd - (fd @ qn) * qn
        scale = max(np.abs(fd_tan).max(), 1e-6)
        assert np.abs(grads.quats[0] - fd_tan).max() <= 1e-3 * scale

    @pytest.mark.parametrize("seed", [9, 19])
    def test_scale_gradient_matches_fd(self, seed):
        cam = camera_64()
        store = self._scene(seed)
        frame = gradcheck_frame(store, cam)
        _, grads, _ = loss_and_gradients(store, np.arange(1), frame, lam=0.5, object_id=1)

        def fd_loss():
            l, _, _ = loss_and_gradients(store, np.empty(0, int), frame, lam=0.5, object_id=1)
            return l

        h = 1e-5
        for ax in range(3):
            store.scales[0, ax] += h
            lp = fd_loss()
            store.scales[0, ax] -= 2 * h
            lm = fd_loss()
            store.scales[0, ax] += h
            fd = (lp - lm) / (2 * h)
            assert abs(grads.scales[0, ax] - fd) <= 1e-3 * max(abs(fd), abs(grads.scales[0, ax]), 1e-6)


class TestPngFilters:
    def _encode_with_filter(self, img, ftype):
        """Hand-roll a PNG using Sub (1) or Up (2) row filters."""
        h, w = img.shape
        raw = img[:, :, None].astype(np.uint8)
        stride = w
        out = bytearray()
        prev = bytearray(stride)
        for r in range(h):
            row = bytearray(raw[r].tobytes())
            out.append(ftype)
            if ftype == 1:  # Sub: delta against previous pixel
                enc = bytearray(row)
                for i in range(stride - 1, 0, -1):
                    enc[i] = (row[i] - row[i - 1]) & 0xFF
                out += enc
            else:  # Up: delta against previous row
                enc = bytearray((row[i] - prev[i]) & 0xFF for i in range(stride))
                out += enc
            prev = row

        def chunk(tag, payload):
            return (struct.pack(">I", len(payload)) + tag + payload
                    + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

        header = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
        return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header)
                + chunk(b"IDAT", zlib.compress(bytes(out)))
                + chunk(b"IEND", b""))

    @pytest.mark.parametrize("ftype", [1, 2])
    def test_decoder_handles_filtered_rows(self, tmp_path, ftype):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(13, 17), dtype=np.uint8)
        path = tmp_path / "f.png"
        path.write_bytes(self._encode_with_filter(img, ftype))
        assert np.array_equal(read_png(str(path)), img)

    def test_roundtrip_all_supported_formats(self, tmp_path):
        rng = np.random.default_rng(1)
        cases = [
            rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8),
            rng.integers(0, 256, size=(9, 11), dtype=np.uint8),
            rng.integers(0, 65536, size=(9, 11), dtype=np.uint16),
        ]
        for i, img in enumerate(cases):
            p = tmp_path / f"c{i}.png"
            write_png(str(p), img)
            assert np.array_equal(read_png(str(p)), img)


class TestQdOnlyMode:
    def _frame(self, cam, dets, index=0):
        h, w = cam.height, cam.width
        depth = np.full((h, w), 4.0)
        return FrameBundle(rgb=np.zeros((h, w, 3)), depth=depth,
                           instance=np.zeros((h, w), dtype=np.int32),
                           camera=cam, detections=dets, index=index)

    def test_qd_mode_matches_without_overlap(self):
        # the projection drifted away (zero image overlap), but the
        # provisional quadric still agrees: quadric-only mode re-associates
        cam = camera_64()
        obj_map = ObjectMap()
        cfg = AssocConfig(mode="qd", tau=0.25, qd_accept=0.2)
        q = DualQuadric([0.1, 0.1, 4.4], np.eye(3), [0.9, 0.9, 0.9])
        bbox = conic_to_bbox(project_to_conic(q, cam))
        det = Detection2D(bbox=bbox, class_id=3)
        associate_frame(obj_map, self._frame(cam, [det], 0), cfg)
        assert len(obj_map) == 1
        track = obj_map.live_tracks()[0]
        # shift the detection a full box away: no overlap with the first
        shift = bbox.width * 1.2
        far = Detection2D(
            bbox=BBox2D(bbox.x_min + shift, bbox.y_min, bbox.x_max + shift, bbox.y_max),
            class_id=3,
        )
        res = associate_frame(obj_map, self._frame(cam, [far], 1), cfg)
        assert res.matches == [(track.object_id, 0)]

    def test_iou_mode_spawns_for_same_case(self):
        cam = camera_64()
        obj_map = ObjectMap()
        cfg = AssocConfig(mode="iou", iou_gate=0.3)
        q = DualQuadric([0.1, 0.1, 4.4], np.eye(3), [0.9, 0.9, 0.9])
        bbox = conic_to_bbox(project_to_conic(q, cam))
        det = Detection2D(bbox=bbox, class_id=3)
        associate_frame(obj_map, self._frame(cam, [det], 0), cfg)
        shift = bbox.width * 1.2
        far = Detection2D(
            bbox=BBox2D(bbox.x_min + shift, bbox.y_min, bbox.x_max + shift, bbox.y_max),
            class_id=3,
        )
        res = associate_frame(obj_map, self._frame(cam, [far], 1), cfg)
        assert res.matches == []
        assert res.new_tracks == [0]


class TestConfigWiring:
    def test_thresholds_reach_masks(self):
        cfg = PipelineConfig(theta_alpha=0.42, theta_d=0.07, theta_c=0.03,
                             include_background=True)
        thr = cfg.thresholds()
        assert thr.theta_alpha == 0.42
        assert thr.theta_d == 0.07
        assert thr.theta_c == 0.03
        assert thr.include_background

    def test_assoc_wiring(self):
        cfg = PipelineConfig(assoc_mode="qd", iou_gate=0.11, qd_accept=0.22,
                             tau=0.33, t_thre=0.44, merge_d=0.055,
                             merge_duplicate_raw=0.066, merge_iou3d=0.077)
        a = cfg.assoc()
        assert (a.mode, a.iou_gate, a.qd_accept, a.tau) == ("qd", 0.11, 0.22, 0.33)
        assert (a.t_thre, a.merge_d, a.merge_duplicate_raw, a.merge_iou3d) == (
            0.44, 0.055, 0.066, 0.077)

    def test_training_wiring(self):
        cfg = PipelineConfig(gaussian_iters=7, lam=0.9, lr_mean=0.123,
                             optimize_scale_rot=True)
        t = cfg.training()
        assert (t.iters, t.lam, t.lr_mean, t.optimize_scale_rot) == (7, 0.9, 0.123, True)
