"""Hypothesis generation: stratified sampling, perturbation, propagation."""

import numpy as np
import pytest

from patchmvs.hypothesis import (
    OffsetField,
    evaluation_pattern,
    init_random,
    perturb,
    propagate,
    propagation_offsets,
    propagation_pattern,
)


class TestPatterns:
    def test_sixteen_is_two_rings(self):
        pat = propagation_pattern(16)
        assert pat.shape == (16, 2)
        radii = np.abs(pat).max(axis=1)
        assert sorted(set(radii.tolist())) == [2.0, 4.0]
        assert not any((pat == 0).all(axis=1))

    def test_eight_is_one_ring(self):
        pat = propagation_pattern(8, dilations=(3, 6))
        assert pat.shape == (8, 2)
        assert np.abs(pat).max() == 3.0

    def test_zero_is_empty(self):
        assert propagation_pattern(0).shape == (0, 2)

    def test_unknown_count(self):
        with pytest.raises(ValueError, match="pattern"):
            propagation_pattern(5)

    def test_evaluation_grid(self):
        pat = evaluation_pattern(9, dilation=2)
        assert pat.shape == (9, 2)
        assert (pat == 0).all(axis=1).any()  # includes the center
        assert np.abs(pat).max() == 2.0
        with pytest.raises(ValueError):
            evaluation_pattern(7)


class TestInitRandom:
    def test_single_bin_covers_inverse_range(self):
        vol = init_random((2.0, 8.0), 32, 24, bins=1, seed=0)
        assert vol.shape == (24, 32, 1)
        assert vol.min() >= 2.0 - 1e-5
        assert vol.max() <= 8.0 + 1e-5

    def test_two_bins_split_inverse_range(self):
        # inverse range [0.125, 0.5]; bin 0 -> inv in [0.125, 0.3125)
        vol = init_random((2.0, 8.0), 16, 16, bins=2, seed=1)
        inv = 1.0 / vol.astype(np.float64)
        assert (inv[:, :, 0] < 0.3125).all()
        assert (inv[:, :, 1] >= 0.3125).all()

    @pytest.mark.parametrize("bins", [1, 2, 8, 48])
    def test_exactly_one_sample_per_bin(self, bins):
        d_min, d_max = 425.0, 935.0
        vol = init_random((d_min, d_max), 64, 64, bins=bins, seed=2)
        assert vol.shape == (64, 64, bins)
        lo, hi = 1.0 / d_max, 1.0 / d_min
        idx = np.floor((1.0 / vol.astype(np.float64) - lo) / (hi - lo) * bins)
        idx = np.clip(idx, 0, bins - 1).astype(int)
        np.testing.assert_array_equal(idx, np.broadcast_to(np.arange(bins), idx.shape))

    def test_deterministic(self):
        a = init_random((3.5, 7.0), 20, 10, bins=8, seed=42)
        b = init_random((3.5, 7.0), 20, 10, bins=8, seed=42)
        np.testing.assert_array_equal(a, b)
        c = init_random((3.5, 7.0), 20, 10, bins=8, seed=43)
        assert not np.array_equal(a, c)


class TestPerturb:
    def test_vanishing_window_returns_previous(self):
        prev = np.full((6, 6), 4.2, dtype=np.float32)
        vol = perturb(prev, 1e-12, 4, (2.0, 8.0), seed=0, stage=2, iteration=1)
        np.testing.assert_allclose(vol, 4.2, rtol=1e-5)

    def test_oversized_window_clamps_to_range(self):
        # centered in inverse range with a window twice its length
        d_center = 2.0 / (1.0 / 2.0 + 1.0 / 8.0)  # inverse midpoint
        prev = np.full((8, 8), d_center, dtype=np.float32)
        vol = perturb(prev, 2.0, 16, (2.0, 8.0), seed=1, stage=2, iteration=1)
        inv = 1.0 / vol.astype(np.float64)
        assert inv.min() >= 1.0 / 8.0 - 1e-9
        assert inv.max() <= 1.0 / 2.0 + 1e-9
        # stratified over the full clamped range: first bin low, last high
        assert inv[..., 0].max() < inv[..., -1].min()

    def test_sample_count_and_range(self):
        rng = np.random.default_rng(2)
        prev = rng.uniform(3.6, 6.9, size=(10, 12)).astype(np.float32)
        vol = perturb(prev, 0.09, 8, (3.5, 7.0), seed=3, stage=2, iteration=2)
        assert vol.shape == (10, 12, 8)
        assert vol.min() >= 3.5 - 1e-4
        assert vol.max() <= 7.0 + 1e-4

    def test_one_sample_per_window_bin(self):
        prev = np.full((16, 16), 5.0, dtype=np.float32)
        frac, bins = 0.38, 16
        vol = perturb(prev, frac, bins, (3.5, 7.0), seed=4, stage=3, iteration=2)
        lo, hi = 1.0 / 7.0, 1.0 / 3.5
        half = 0.5 * frac * (hi - lo)
        w_lo = max(0.2 - half, lo)
        w_hi = min(0.2 + half, hi)
        idx = np.floor((1.0 / vol.astype(np.float64) - w_lo) / (w_hi - w_lo) * bins)
        idx = np.clip(idx, 0, bins - 1).astype(int)
        np.testing.assert_array_equal(idx, np.broadcast_to(np.arange(bins), idx.shape))

    def test_deterministic(self):
        prev = np.full((5, 5), 5.0, dtype=np.float32)
        a = perturb(prev, 0.1, 4, (3.5, 7.0), seed=7, stage=1, iteration=1)
        b = perturb(prev, 0.1, 4, (3.5, 7.0), seed=7, stage=1, iteration=1)
        np.testing.assert_array_equal(a, b)


class TestPropagationOffsets:
    def test_fixed_mode_zero_deltas(self):
        feats = np.random.default_rng(0).random((12, 12, 8)).astype(np.float32)
        field = propagation_offsets(feats, 16, mode="fixed")
        assert field.count == 16
        np.testing.assert_array_equal(field.deltas, 0.0)

    def test_constant_features_keep_zero_deltas(self):
        feats = np.full((10, 10, 4), 0.7, dtype=np.float32)
        field = propagation_offsets(feats, 8, mode="feature_guided")
        np.testing.assert_array_equal(field.deltas, 0.0)

    def test_snapping_toward_similar_region(self):
        # Two vertical feature regions; base sample of the ring crosses the
        # boundary, and snapping pulls it back toward the center's region.
        h, w = 12, 16
        feats = np.zeros((h, w, 2), dtype=np.float32)
        feats[:, :8, 0] = 1.0  # left region: e0
        feats[:, 8:, 1] = 1.0  # right region: e1
        field = propagation_offsets(feats, 8, mode="feature_guided", dilations=(2, 4))
        # pixel at x=6: base offset (+2, 0) lands at x=8 (right region);
        # best candidate in its 3x3 window is x=7 (left region) -> dx=-1
        k = [i for i, (dx, dy) in enumerate(field.base) if dx == 2 and dy == 0][0]
        assert field.deltas[6, 6, k, 0] == -1.0
        # pixel at x=2: base (+2,0) lands at x=4, same region -> no snap
        assert field.deltas[6, 2, k, 0] == 0.0

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            propagation_offsets(np.zeros((4, 4, 2), np.float32), 8, mode="nope")


class TestPropagate:
    def test_constant_map_stays_constant(self):
        prev = np.full((9, 9), 3.3, dtype=np.float32)
        feats = np.random.default_rng(1).random((9, 9, 4)).astype(np.float32)
        field = propagation_offsets(feats, 16, mode="feature_guided")
        vol = propagate(prev, field)
        assert vol.shape == (9, 9, 16)
        np.testing.assert_allclose(vol, 3.3, atol=1e-6)

    def test_zero_offsets_reproduce_previous(self):
        rng = np.random.default_rng(2)
        prev = rng.uniform(2, 5, size=(7, 8)).astype(np.float32)
        field = OffsetField(
            base=np.zeros((3, 2), dtype=np.float32),
            deltas=np.zeros((7, 8, 3, 2), dtype=np.float32),
        )
        vol = propagate(prev, field)
        for j in range(3):
            np.testing.assert_array_equal(vol[:, :, j], prev)

    def test_step_map_blends_across_step(self):
        # step between x=3 (value 2) and x=4 (value 6); sampling at
        # x = 2 + 1.5 interpolates 0.5*2 + 0.5*6 = 4
        prev = np.full((5, 8), 2.0, dtype=np.float32)
        prev[:, 4:] = 6.0
        field = OffsetField(
            base=np.array([[1.0, 0.0]], dtype=np.float32),
            deltas=np.full((5, 8, 1, 2), 0.0, dtype=np.float32),
        )
        field.deltas[..., 0] = 0.5  # dx = +0.5 on top of base (1, 0)
        vol = propagate(prev, field)
        assert vol[2, 2, 0] == pytest.approx(0.5 * 2.0 + 0.5 * 6.0)

    def test_out_of_bounds_falls_back_to_center(self):
        prev = np.arange(12, dtype=np.float32).reshape(3, 4) + 1.0
        field = OffsetField(
            base=np.array([[-10.0, 0.0]], dtype=np.float32),
            deltas=np.zeros((3, 4, 1, 2), dtype=np.float32),
        )
        vol = propagate(prev, field)
        np.testing.assert_array_equal(vol[:, :, 0], prev)

    def test_empty_offsets(self):
        prev = np.ones((4, 4), dtype=np.float32)
        field = propagation_offsets(np.zeros((4, 4, 2), np.float32), 0)
        assert propagate(prev, field).shape == (4, 4, 0)
