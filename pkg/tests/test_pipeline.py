"""Cascade orchestration: convergence, determinism, bookkeeping, refinement."""

import dataclasses

import numpy as np
import pytest

from conftest import DEPTH_RANGE, ring_cameras, slab_plane_scene, upsample_to
from patchmvs.coeffs import CoefficientSet
from patchmvs.grid import upsample_x2
from patchmvs.harness import error_cdf, render
from patchmvs.hypothesis import StageConfig
from patchmvs.pipeline import PipelineConfig, refine, run_cascade, run_stage


def small_config(**kwargs) -> PipelineConfig:
    return PipelineConfig(seed=1, **kwargs)


class TestRunCascade:
    def test_plane_reconstruction_quality(self, plane_cascade_small):
        scene, views, result = plane_cascade_small
        gt = views[0].depth
        fg = ~views[0].background
        rel = np.abs(result.depth - gt) / np.maximum(gt, 1e-9)
        assert (rel[fg] < 0.01).mean() > 0.9

    def test_stage3_convergence_on_plane(self, plane_cascade_small):
        # after the coarsest stage, at least 90% of foreground pixels sit
        # within 10% of the normalized inverse-depth range
        scene, views, result = plane_cascade_small
        gt = views[0].depth
        fg = ~views[0].background
        stage3 = [s for s in result.snapshots if s.stage == 3][-1]
        depth = upsample_to(stage3.depth, gt.shape)
        _, cdf = error_cdf(depth, gt, DEPTH_RANGE, mask=fg)
        assert cdf[9] >= 0.90

    def test_iteration_error_non_increasing(self, plane_cascade_small):
        scene, views, result = plane_cascade_small
        gt = views[0].depth
        fg = ~views[0].background
        length = 1.0 / DEPTH_RANGE[0] - 1.0 / DEPTH_RANGE[1]
        means = []
        for snap in result.snapshots:
            depth = upsample_to(snap.depth, gt.shape)
            err = np.abs(1.0 / depth - 1.0 / np.maximum(gt, 1e-9))[fg] / length
            means.append(err.mean())
        for before, after in zip(means, means[1:]):
            assert after <= before * 1.02

    def test_depth_within_range_everywhere(self, plane_cascade_small):
        _, _, result = plane_cascade_small
        lo, hi = result.depth_range
        assert result.depth.min() >= lo - 1e-5
        assert result.depth.max() <= hi + 1e-5
        for snap in result.snapshots:
            assert snap.depth.min() >= lo - 1e-4
            assert snap.depth.max() <= hi + 1e-4

    def test_deterministic_across_runs(self, plane_views_small):
        scene, views = plane_views_small
        images = [v.image for v in views]
        a = run_cascade(images, scene.cameras, small_config())
        b = run_cascade(images, scene.cameras, small_config())
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.confidence, b.confidence)

    def test_confidence_shape_and_range(self, plane_cascade_small):
        _, views, result = plane_cascade_small
        assert result.confidence.shape == views[0].depth.shape
        assert result.confidence.min() >= 0.0
        assert result.confidence.max() <= 1.0

    def test_degenerate_rig_warns_and_flags(self):
        rng = np.random.default_rng(0)
        images = [rng.random((32, 40)).astype(np.float32)] * 2
        cams = ring_cameras(40, 32, baseline=0.0, count=1) * 2
        with pytest.warns(RuntimeWarning, match="baseline"):
            result = run_cascade(images, cams, small_config())
        assert result.degenerate

    def test_rejects_single_view(self):
        cams = ring_cameras(40, 32, count=1)
        with pytest.raises(ValueError, match="source"):
            run_cascade([np.zeros((32, 40), np.float32)], cams, small_config())

    def test_rejects_mismatched_sizes(self):
        cams = ring_cameras(40, 32, count=2)
        with pytest.raises(ValueError, match="size"):
            run_cascade(
                [np.zeros((32, 40), np.float32), np.zeros((32, 48), np.float32)],
                cams,
                small_config(),
            )

    def test_pads_non_multiple_sizes(self):
        scene = slab_plane_scene(168, 136)  # not divisible by 8
        views = render(scene)
        result = run_cascade([v.image for v in views], scene.cameras, small_config())
        assert result.depth.shape == (136, 168)
        assert result.confidence.shape == (136, 168)


class TestHypothesisAccounting:
    def test_counts_without_propagation(self, plane_views_small):
        scene, views = plane_views_small
        cfg = small_config()
        stages = tuple(
            dataclasses.replace(s, prop_samples=0) for s in cfg.stages
        )
        cfg = dataclasses.replace(cfg, stages=stages)
        result = run_cascade([v.image for v in views], scene.cameras, cfg)
        h, w = views[0].depth.shape
        expected = {
            (3, 1): (h // 8) * (w // 8) * 48 * 4,
            (3, 2): (h // 8) * (w // 8) * 16 * 4,
            (2, 1): (h // 4) * (w // 4) * 8 * 4,
            (2, 2): (h // 4) * (w // 4) * 8 * 4,
            (1, 1): (h // 2) * (w // 2) * 8 * 4,
        }
        got = {(s, i): b for s, i, b in result.hypothesis_bytes}
        assert got == expected

    def test_counts_with_propagation(self, plane_cascade_small):
        scene, views, result = plane_cascade_small
        h, w = views[0].depth.shape
        got = {(s, i): b for s, i, b in result.hypothesis_bytes}
        # propagation adds K_p hypotheses except at initialization and on
        # the final stage-1 iteration
        assert got[(3, 2)] == (h // 8) * (w // 8) * (16 + 16) * 4
        assert got[(2, 1)] == (h // 4) * (w // 4) * (8 + 8) * 4
        assert got[(1, 1)] == (h // 2) * (w // 2) * 8 * 4

    def test_bytes_independent_of_depth_range(self, plane_views_small):
        scene, views = plane_views_small
        images = [v.image for v in views]
        narrow = run_cascade(images, scene.cameras, small_config())
        wide_cams = [
            dataclasses.replace(c, depth_min=c.depth_min, depth_max=c.depth_min + 10 * (c.depth_max - c.depth_min))
            for c in scene.cameras
        ]
        wide = run_cascade(images, wide_cams, small_config())
        assert narrow.hypothesis_bytes == wide.hypothesis_bytes


class TestRunStage:
    def test_missing_previous_depth_rejected(self):
        cfg = small_config()
        feats = [np.zeros((8, 8, 8), np.float32)] * 2
        cams = ring_cameras(8 * 2, 8 * 2, count=2)
        with pytest.raises(ValueError, match="previous"):
            run_stage(cfg.stage(2), None, feats, cams, None, cfg)


class TestViewWeights:
    def test_returned_at_finest_resolution(self, plane_cascade_small):
        scene, views, result = plane_cascade_small
        h, w = views[0].depth.shape
        assert len(result.view_weights) == len(scene.cameras) - 1
        for vw in result.view_weights:
            assert vw.shape == (h // 2, w // 2)
            assert vw.min() >= 0.0 and vw.max() <= 1.0

    def test_ablation_switches_run(self, plane_views_small):
        scene, views = plane_views_small
        images = [v.image for v in views[:3]]
        cams = scene.cameras[:3]
        for kwargs in (
            {"adaptive_propagation": False},
            {"adaptive_evaluation": False},
            {"view_weighting": False},
        ):
            result = run_cascade(images, cams, small_config(**kwargs))
            assert np.isfinite(result.depth).all()


class TestRefine:
    def test_constant_depth_unchanged(self):
        depth = np.full((16, 20), 4.5, dtype=np.float32)
        rng = np.random.default_rng(1)
        image = rng.random((32, 40)).astype(np.float32)
        out = refine(depth, image)
        assert out.shape == (32, 40)
        np.testing.assert_allclose(out, 4.5, atol=1e-5)

    def test_step_edge_snaps_to_image_edge(self):
        # depth step at half-res x=10 (full-res 20); image edge at x=20
        h, w = 24, 32
        depth = np.full((h, w), 4.0, dtype=np.float32)
        depth[:, 10:] = 6.0
        image = np.full((2 * h, 2 * w), 0.2, dtype=np.float32)
        image[:, 20:] = 0.9
        out = refine(depth, image)
        mid = (4.0 + 6.0) / 2
        edge_cols = np.argmax(out > mid, axis=1)
        assert np.abs(edge_cols - 20).max() <= 1

    def test_coefficient_zero_residual_equals_bilinear_upsample(self):
        rng = np.random.default_rng(2)
        tensors = {
            "ref.fd.conv0.weight": rng.standard_normal((16, 1, 3, 3)).astype(np.float32) * 0.1,
            "ref.fd.conv0.bias": np.zeros(16, np.float32),
            "ref.fd.deconv.weight": rng.standard_normal((16, 16, 4, 4)).astype(np.float32) * 0.1,
            "ref.fd.deconv.bias": np.zeros(16, np.float32),
            "ref.fi.conv0.weight": rng.standard_normal((16, 3, 3, 3)).astype(np.float32) * 0.1,
            "ref.fi.conv0.bias": np.zeros(16, np.float32),
            "ref.mix.conv0.weight": rng.standard_normal((16, 32, 3, 3)).astype(np.float32) * 0.1,
            "ref.mix.conv0.bias": np.zeros(16, np.float32),
            "ref.mix.conv1.weight": rng.standard_normal((16, 16, 3, 3)).astype(np.float32) * 0.1,
            "ref.mix.conv1.bias": np.zeros(16, np.float32),
            "ref.head.weight": np.zeros((1, 16, 3, 3), np.float32),
            "ref.head.bias": np.zeros(1, np.float32),
        }
        cset = CoefficientSet(tensors=tensors)
        depth = rng.uniform(3, 7, size=(12, 16)).astype(np.float32)
        image = rng.random((24, 32)).astype(np.float32)
        out = refine(depth, image, mode="coefficients", coefficients=cset)
        np.testing.assert_allclose(out, upsample_x2(depth), atol=1e-4)

    def test_image_size_checked(self):
        with pytest.raises(ValueError, match="twice"):
            refine(np.ones((8, 8), np.float32), np.ones((20, 16), np.float32))


class TestPipelineConfig:
    def test_rejects_wrong_stage_order(self):
        stages = (
            StageConfig(stage=1, iterations=1, perturb_bins=8, window_frac=0.04, prop_samples=0),
            StageConfig(stage=2, iterations=2, perturb_bins=8, window_frac=0.09, prop_samples=8),
            StageConfig(stage=3, iterations=2, perturb_bins=16, window_frac=0.38, prop_samples=16),
        )
        with pytest.raises(ValueError, match="coarse-to-fine"):
            PipelineConfig(stages=stages)

    def test_rejects_non_shrinking_windows(self):
        stages = (
            StageConfig(stage=3, iterations=2, perturb_bins=16, window_frac=0.04, prop_samples=16),
            StageConfig(stage=2, iterations=2, perturb_bins=8, window_frac=0.09, prop_samples=8),
            StageConfig(stage=1, iterations=1, perturb_bins=8, window_frac=0.38, prop_samples=0),
        )
        with pytest.raises(ValueError, match="shrink"):
            PipelineConfig(stages=stages)

    def test_default_matches_reference_settings(self):
        cfg = PipelineConfig()
        assert [s.iterations for s in cfg.stages] == [2, 2, 1]
        assert cfg.stage(3).init_bins == 48
        assert [cfg.stage(k).perturb_bins for k in (3, 2, 1)] == [16, 8, 8]
        assert [cfg.stage(k).window_frac for k in (3, 2, 1)] == [0.38, 0.09, 0.04]
        assert [cfg.stage(k).prop_samples for k in (3, 2, 1)] == [16, 8, 0]
        assert all(s.eval_samples == 9 for s in cfg.stages)
