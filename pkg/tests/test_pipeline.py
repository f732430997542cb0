import json
import os

import numpy as np
import pytest

from objmap.cli import main as cli_main
from objmap.errors import InvalidParameterError
from objmap.gaussians import KIND_OPAQUE
from objmap.pipeline import (
    PipelineConfig,
    dataset_cameras,
    eval_pose,
    eval_recon,
    export_objects,
    load_state,
    run_pipeline,
    save_state,
)
from objmap.quadrics import DualQuadric
from objmap.scenes import ablation_config, sphere_scene
from objmap.simulator import ObjectSpec, OrbitTrajectory, SceneSpec, generate, load_gt
from oracles import brute_force_nn_means


def small_scene(**kw):
    args = dict(
        objects=[
            ObjectSpec(class_id=1, shape="sphere", center=(0, 0, 0.4),
                       semi_axes=(0.3, 0.3, 0.3), albedo=(0.8, 0.3, 0.2)),
            ObjectSpec(class_id=2, shape="ellipsoid", center=(0.8, 0.4, 0.3),
                       semi_axes=(0.25, 0.2, 0.22), albedo=(0.2, 0.6, 0.8)),
        ],
        n_frames=12,
        width=96, height=72, fx=85, fy=85,
        trajectory=OrbitTrajectory(target=(0.3, 0.2, 0.35), radius=2.0, height=0.9),
    )
    args.update(kw)
    return SceneSpec(**args)


def fast_config(**kw):
    cfg = ablation_config("qd+iou")
    cfg.enable_gaussians = True
    cfg.stride = 3
    cfg.gaussian_iters = 4
    cfg.lr_mean = 0.0
    cfg.quadric_every = 6
    cfg.quadric_final_iters = 60
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("small") / "ds"
    generate(small_scene(), str(d))
    return str(d)


class TestRunPipeline:
    def test_tracks_and_gaussians(self, small_dataset):
        # noiseless replay with non-overlapping objects: track count equals
        # the GT object count and gaussian ids follow the GT instance ids
        res = run_pipeline(small_dataset, fast_config())
        assert res.track_count() == 2
        assert len(res.store) > 0
        assert set(res.store.present_ids()) == {1, 2}
        assert sorted(res.object_map.tracks) == [1, 2]

    def test_single_worker_rerun_identical(self, small_dataset):
        cfg = fast_config()
        a = run_pipeline(small_dataset, cfg)
        b = run_pipeline(small_dataset, cfg)
        assert np.array_equal(a.store.means, b.store.means)
        assert np.array_equal(a.store.colors, b.store.colors)
        ta = {t.object_id: t.quadric.center for t in a.object_map.live_tracks()}
        tb = {t.object_id: t.quadric.center for t in b.object_map.live_tracks()}
        assert ta.keys() == tb.keys()
        for k in ta:
            assert np.array_equal(ta[k], tb[k])

    def test_worker_count_does_not_change_results(self, small_dataset):
        a = run_pipeline(small_dataset, fast_config(workers=1))
        b = run_pipeline(small_dataset, fast_config(workers=3))
        gt = load_gt(small_dataset)
        ra = eval_pose(a, gt, [])
        rb = eval_pose(b, gt, [])
        assert ra.mean_iou_3d == pytest.approx(rb.mean_iou_3d, abs=1e-6)
        assert ra.mean_cde_cm == pytest.approx(rb.mean_cde_cm, abs=1e-6)
        assert np.allclose(a.store.means, b.store.means)

    def test_empty_dataset(self, tmp_path):
        d = tmp_path / "empty"
        generate(small_scene(n_frames=1), str(d))
        # remove the single frame from the pose list -> zero frames stream
        with open(d / "poses.txt", "w") as f:
            f.write("")
        res = run_pipeline(str(d), fast_config())
        assert res.track_count() == 0
        assert len(res.store) == 0

    def test_detections_withheld(self, tmp_path):
        d = tmp_path / "nodet"
        generate(small_scene(detection_dropout=1.0), str(d))
        res = run_pipeline(str(d), fast_config())
        assert res.track_count() == 0
        assert len(res.store) == 0  # nothing detected -> nothing mapped

    def test_detections_withheld_background_only(self, tmp_path):
        d = tmp_path / "nodet_bg"
        generate(small_scene(detection_dropout=1.0, n_frames=2), str(d))
        res = run_pipeline(str(d), fast_config(include_background=True,
                                               max_new_per_frame=200))
        assert res.track_count() == 0
        assert len(res.store) > 0
        assert set(res.store.present_ids()) == {0}


class TestPosePipeline:
    def test_end_to_end_four_objects(self, tmp_path):
        # full replay: association + periodic refinement recovers all four
        # objects with sound 3D boxes
        from objmap.scenes import pose_scene

        d = str(tmp_path / "pose")
        generate(pose_scene(seed=5, width=200, height=150, n_frames=60), d)
        cfg = ablation_config("qd+iou")
        res = run_pipeline(d, cfg)
        gt = load_gt(d)
        report = eval_pose(res, gt, dataset_cameras(d))
        assert res.track_count() == 4
        assert all(o.iou_3d >= 0.5 for o in report.per_object)
        assert all(o.cde_cm is not None and o.cde_cm < 5.0 for o in report.per_object)
        assert report.mean_iou_2d > 0.7


class TestEvalPose:
    def _result_with_tracks(self, quadrics):
        from objmap.association import ObjectMap
        from objmap.gaussians import GaussianStore
        from objmap.pipeline import PipelineResult

        obj_map = ObjectMap()
        for q in quadrics:
            t = obj_map.new_track(class_id=1)
            t.quadric = q
            t.status = "stable"
        return PipelineResult(obj_map, GaussianStore(), [], PipelineConfig())

    def _gt(self, quadrics):
        return {
            "objects": [
                {"id": i + 1, "class_id": 1, "shape": "sphere", "quadric": q,
                 "albedo": np.array([0.5, 0.5, 0.5])}
                for i, q in enumerate(quadrics)
            ],
            "points": {},
        }

    def test_exact_match(self):
        qs = [DualQuadric([0, 0, 1], np.eye(3), [0.3, 0.3, 0.3]),
              DualQuadric([1, 0, 1], np.eye(3), [0.2, 0.25, 0.3])]
        report = eval_pose(self._result_with_tracks(qs), self._gt(qs), [])
        assert report.mean_iou_3d == pytest.approx(1.0, abs=1e-9)
        assert report.mean_cde_cm == pytest.approx(0.0, abs=1e-9)

    def test_one_cm_offset(self):
        gt_q = DualQuadric([0, 0, 1], np.eye(3), [0.3, 0.3, 0.3])
        est_q = DualQuadric([0.01, 0, 1], np.eye(3), [0.3, 0.3, 0.3])
        report = eval_pose(self._result_with_tracks([est_q]), self._gt([gt_q]), [])
        assert report.per_object[0].cde_cm == pytest.approx(1.0, abs=1e-9)

    def test_unmatched_gt_is_miss(self):
        gt_qs = [DualQuadric([0, 0, 1], np.eye(3), [0.3, 0.3, 0.3]),
                 DualQuadric([5, 5, 1], np.eye(3), [0.3, 0.3, 0.3])]
        report = eval_pose(self._result_with_tracks(gt_qs[:1]), self._gt(gt_qs), [])
        misses = [o for o in report.per_object if o.track_id is None]
        assert len(misses) == 1
        assert misses[0].iou_3d == 0.0
        assert misses[0].cde_cm is None
        assert report.mean_iou_3d == pytest.approx(0.5, abs=1e-9)


class TestEvalRecon:
    def test_identical_sets(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(500, 3))
        acc, comp, ratio = eval_recon(pts, pts, threshold_cm=1.0)
        assert acc == 0.0 and comp == 0.0 and ratio == 100.0

    def test_translated_plane(self):
        # plane grids offset by 2 cm along the normal; threshold 1 cm
        xs, ys = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32))
        gt = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
        est = gt + np.array([0, 0, 0.02])
        acc, comp, ratio = eval_recon(est, gt, threshold_cm=1.0)
        assert acc == pytest.approx(2.0, abs=1e-9)
        assert comp == pytest.approx(2.0, abs=1e-9)
        assert ratio == pytest.approx(0.0, abs=1e-9)
        # brute-force oracle agreement
        b_acc, b_comp = brute_force_nn_means(est, gt)
        assert acc == pytest.approx(b_acc * 100, abs=1e-9)
        assert comp == pytest.approx(b_comp * 100, abs=1e-9)

    def test_subset_completion(self):
        rng = np.random.default_rng(1)
        gt = rng.normal(size=(300, 3))
        est = np.vstack([gt, rng.normal(size=(100, 3)) + 5.0])
        acc, comp, ratio = eval_recon(est, gt, threshold_cm=1.0)
        assert comp == 0.0
        assert ratio == 100.0
        assert acc > 0.0

    def test_empty_rejected(self):
        with pytest.raises(InvalidParameterError):
            eval_recon(np.empty((0, 3)), np.ones((5, 3)))


class TestExportAndState:
    def test_export_objects(self, small_dataset, tmp_path):
        res = run_pipeline(small_dataset, fast_config())
        manifest = export_objects(res, str(tmp_path / "objs"))
        ids = [o["id"] for o in manifest["objects"]]
        assert sorted(ids) == sorted(set(ids))
        from objmap.plyio import read_point_ply

        for entry in manifest["objects"]:
            ply = read_point_ply(tmp_path / "objs" / entry["ply"])
            assert len(ply["points"]) == entry["gaussians"]

    def test_export_empty_map(self, tmp_path):
        from objmap.association import ObjectMap
        from objmap.gaussians import GaussianStore
        from objmap.pipeline import PipelineResult

        res = PipelineResult(ObjectMap(), GaussianStore(), [], PipelineConfig())
        manifest = export_objects(res, str(tmp_path / "objs"))
        assert manifest["objects"] == []

    def test_state_roundtrip(self, small_dataset, tmp_path):
        res = run_pipeline(small_dataset, fast_config())
        save_state(res, str(tmp_path / "state"))
        back = load_state(str(tmp_path / "state"))
        assert back.track_count() == res.track_count()
        assert np.array_equal(back.store.means, res.store.means)
        assert np.array_equal(back.store.object_ids, res.store.object_ids)
        for ta, tb in zip(res.object_map.live_tracks(), back.object_map.live_tracks()):
            assert ta.object_id == tb.object_id
            assert ta.class_id == tb.class_id
            assert np.allclose(ta.quadric.center, tb.quadric.center)

    def test_config_json_roundtrip(self, tmp_path):
        cfg = fast_config(tau=0.33, workers=2)
        path = tmp_path / "cfg.json"
        cfg.to_json(str(path))
        back = PipelineConfig.from_json(str(path))
        assert back == cfg

    def test_config_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"no_such_threshold": 1.0}))
        with pytest.raises(InvalidParameterError):
            PipelineConfig.from_json(str(path))


class TestCli:
    def test_full_cycle(self, tmp_path):
        ds = str(tmp_path / "ds")
        state = str(tmp_path / "state")
        assert cli_main(["simulate", "--preset", "sphere", "--frames", "6",
                         "--width", "64", "--height", "48", "--out", ds]) == 0
        assert cli_main([
            "run", "--dataset", ds, "--out-state", state,
            "--tau", "0.25", "--qd-accept", "0.2", "--stride", "3",
            "--gaussian-iters", "3", "--lr-mean", "0.0",
        ]) == 0
        assert cli_main(["eval-pose", "--state", state, "--dataset", ds,
                         "--out", str(tmp_path / "pose.json")]) == 0
        assert cli_main(["eval-recon", "--state", state, "--dataset", ds]) == 0
        assert cli_main(["export", "--state", state, "--out", str(tmp_path / "objs")]) == 0
        assert cli_main(["render-frame", "--state", state, "--dataset", ds,
                         "--frame", "2", "--out-prefix", str(tmp_path / "f2")]) == 0
        report = json.loads((tmp_path / "pose.json").read_text())
        assert report["gt_count"] == 1

    def test_exit_codes(self, tmp_path):
        assert cli_main(["run", "--dataset", "/does/not/exist",
                         "--out-state", str(tmp_path / "s")]) == 1
        assert cli_main(["run", "--dataset", str(tmp_path)]) == 2  # missing flag
        bad_cfg = tmp_path / "bad.json"
        bad_cfg.write_text("{\"bogus\": 1}")
        assert cli_main(["run", "--dataset", str(tmp_path), "--out-state",
                         str(tmp_path / "s"), "--config", str(bad_cfg)]) == 2
