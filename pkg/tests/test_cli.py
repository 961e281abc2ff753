"""End-to-end command-line flows: synth -> depth -> fuse -> eval."""

import json

import numpy as np
import pytest

from patchmvs.cli import main
from patchmvs.dataset import DatasetError, load_dataset
from patchmvs.fusion import FusedCloud, read_ply, write_ply
from patchmvs.imgio import read_pfm

SCENE = """
size 160 128
range 3.5 7.0
seed 3
camera pos 0 0 0 lookat 0 0 5 fov 40
camera pos 0.6 0 0 lookat 0 0 5 fov 40
camera pos -0.6 0 0 lookat 0 0 5 fov 40
camera pos 0 0.48 0 lookat 0 0 5 fov 40
camera pos 0 -0.48 0 lookat 0 0 5 fov 40
box min -1.45 -1.05 5.0 max 1.45 1.05 5.2 texture noise 2.5
"""

SPHERE_SCENE = """
size 96 72
range 2.0 9.0
camera pos 0 0 0 lookat 0 0 5 fov 50
sphere center 0 0 5 radius 1.5 texture noise 3
"""


@pytest.fixture(scope="module")
def synth_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene_path = root / "scene.txt"
    scene_path.write_text(SCENE)
    data_dir = root / "dataset"
    assert main(["synth", str(scene_path), str(data_dir)]) == 0
    return data_dir


@pytest.fixture(scope="module")
def depth_run(synth_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("depth")
    assert (
        main(
            [
                "depth",
                str(synth_dataset),
                str(out),
                "--views",
                "5",
                "--seed",
                "1",
            ]
        )
        == 0
    )
    return out


class TestSynth:
    def test_layout_is_loadable(self, synth_dataset):
        data = load_dataset(synth_dataset)
        assert len(data) == 5
        assert data.gt_depths is not None
        assert data.images[0].shape == (128, 160)
        assert data.cams[0].depth_min == pytest.approx(3.5)

    def test_deterministic_regeneration(self, synth_dataset, tmp_path):
        scene_path = tmp_path / "scene.txt"
        scene_path.write_text(SCENE)
        again = tmp_path / "again"
        main(["synth", str(scene_path), str(again)])
        for name in ("images/00000000.png", "gt_depths/00000003.pfm"):
            assert (again / name).read_bytes() == (synth_dataset / name).read_bytes()

    def test_sphere_depth_symmetry(self, tmp_path):
        scene_path = tmp_path / "sphere.txt"
        scene_path.write_text(SPHERE_SCENE)
        out = tmp_path / "sphere_data"
        main(["synth", str(scene_path), str(out)])
        depth = read_pfm(out / "gt_depths" / "00000000.pfm")
        fg = depth > 0
        sym = np.where(fg, depth, np.inf)
        np.testing.assert_allclose(sym, sym[:, ::-1], atol=1e-4)


class TestDepth:
    def test_outputs_per_view(self, synth_dataset, depth_run):
        for i in range(5):
            assert (depth_run / "depths" / f"{i:08d}.pfm").is_file()
            assert (depth_run / "confidence" / f"{i:08d}.pfm").is_file()
        depth = read_pfm(depth_run / "depths" / "00000000.pfm")
        assert depth.shape == (128, 160)
        assert depth.min() >= 3.5 - 1e-5 and depth.max() <= 7.0 + 1e-5

    def test_report_contents(self, depth_run):
        report = json.loads((depth_run / "report.json").read_text())
        view = report["views"]["00000000"]
        assert set(view["seconds"]) >= {"features", "stage3", "stage2", "stage1", "refine"}
        stages = [(e["stage"], e["iteration"]) for e in view["hypothesis_bytes"]]
        assert stages == [(3, 1), (3, 2), (2, 1), (2, 2), (1, 1)]
        assert view["peak_hypothesis_bytes"] == max(
            e["bytes"] for e in view["hypothesis_bytes"]
        )
        assert not view["degenerate"]

    def test_quality_against_ground_truth(self, synth_dataset, depth_run):
        data = load_dataset(synth_dataset)
        depth = read_pfm(depth_run / "depths" / "00000000.pfm")
        gt = data.gt_depths[0]
        fg = gt > 0
        rel = np.abs(depth - gt)[fg] / gt[fg]
        assert (rel < 0.02).mean() > 0.85

    def test_deterministic_bytes(self, synth_dataset, tmp_path, depth_run):
        out = tmp_path / "again"
        main(
            [
                "depth",
                str(synth_dataset),
                str(out),
                "--views",
                "5",
                "--seed",
                "1",
                "--ref-views",
                "0",
            ]
        )
        a = (out / "depths" / "00000000.pfm").read_bytes()
        b = (depth_run / "depths" / "00000000.pfm").read_bytes()
        assert a == b

    def test_view_clamp_warns(self, synth_dataset, tmp_path, caplog):
        out = tmp_path / "clamped"
        with caplog.at_level("WARNING", logger="patchmvs"):
            main(
                [
                    "depth",
                    str(synth_dataset),
                    str(out),
                    "--views",
                    "9",
                    "--ref-views",
                    "0",
                    "--stage-iters",
                    "1,1,1",
                ]
            )
        assert any("clamping" in r.message for r in caplog.records)

    def test_ablation_flags_accepted(self, synth_dataset, tmp_path):
        out = tmp_path / "flags"
        code = main(
            [
                "depth",
                str(synth_dataset),
                str(out),
                "--views",
                "3",
                "--ref-views",
                "0",
                "--stage-iters",
                "1,1,1",
                "--no-ap",
                "--no-ae",
                "--no-view-weight",
            ]
        )
        assert code == 0

    def test_bad_stage_iters_rejected(self, synth_dataset, tmp_path):
        with pytest.raises(SystemExit):
            main(
                [
                    "depth",
                    str(synth_dataset),
                    str(tmp_path / "x"),
                    "--stage-iters",
                    "2,2",
                ]
            )


class TestFuse:
    def test_fuse_writes_cloud_and_masks(self, synth_dataset, depth_run, tmp_path):
        out_ply = tmp_path / "fused.ply"
        code = main(
            [
                "fuse",
                str(synth_dataset),
                str(depth_run),
                str(out_ply),
                "--conf-min",
                "0.3",
            ]
        )
        assert code == 0
        cloud = read_ply(out_ply)
        assert len(cloud) > 1000
        for i in range(5):
            mask = read_pfm(tmp_path / "masks" / f"{i:08d}_mask.pfm")
            assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_no_survivors_is_an_error(self, synth_dataset, depth_run, tmp_path):
        with pytest.raises(SystemExit, match="surviving"):
            main(
                [
                    "fuse",
                    str(synth_dataset),
                    str(depth_run),
                    str(tmp_path / "none.ply"),
                    "--conf-min",
                    "1.5",
                ]
            )


class TestEval:
    def test_identity_clouds_score_zero(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        cloud = FusedCloud(
            points=rng.standard_normal((200, 3)).astype(np.float32),
            colors=np.zeros((200, 3), dtype=np.uint8),
            support=np.ones(200, dtype=np.int32),
        )
        a = tmp_path / "a.ply"
        b = tmp_path / "b.ply"
        write_ply(cloud, a)
        write_ply(cloud, b)
        report_path = tmp_path / "report.json"
        main(["eval", str(a), "--gt-cloud", str(b), "--json", str(report_path)])
        report = json.loads(report_path.read_text())
        assert report["accuracy"] == 0.0
        assert report["completeness"] == 0.0
        assert report["overall"] == 0.0
        assert "accuracy" in capsys.readouterr().out

    def test_translated_cloud_reports_offset(self, tmp_path):
        xs, ys = np.meshgrid(np.linspace(0, 1, 40), np.linspace(0, 1, 40))
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(1600)], 1).astype(np.float32)
        gt = FusedCloud(pts, np.zeros((1600, 3), np.uint8), np.ones(1600, np.int32))
        pred = FusedCloud(
            pts + np.array([0, 0, 0.04], np.float32),
            np.zeros((1600, 3), np.uint8),
            np.ones(1600, np.int32),
        )
        a = tmp_path / "pred.ply"
        b = tmp_path / "gt.ply"
        write_ply(pred, a)
        write_ply(gt, b)
        report_path = tmp_path / "r.json"
        main(["eval", str(a), "--gt-cloud", str(b), "--json", str(report_path)])
        report = json.loads(report_path.read_text())
        assert report["accuracy"] == pytest.approx(0.04, rel=0.05)

    def test_full_round_trip_with_dataset_truth(
        self, synth_dataset, depth_run, tmp_path, capsys
    ):
        out_ply = tmp_path / "fused.ply"
        main(["fuse", str(synth_dataset), str(depth_run), str(out_ply)])
        report_path = tmp_path / "metrics.json"
        code = main(
            [
                "eval",
                str(out_ply),
                "--dataset",
                str(synth_dataset),
                "--depths",
                str(depth_run),
                "--json",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert 0 < report["overall"] < 0.2
        assert report["error_cdf"]["cdf"][-1] > 0.8
        assert "error-cdf" in capsys.readouterr().out


class TestDataset:
    def test_missing_camera_names_file(self, synth_dataset, tmp_path):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(synth_dataset, broken)
        (broken / "cams" / "00000002_cam.txt").unlink()
        with pytest.raises(DatasetError, match="00000002_cam.txt"):
            load_dataset(broken)

    def test_missing_images_dir(self, tmp_path):
        with pytest.raises(DatasetError, match="images"):
            load_dataset(tmp_path)
