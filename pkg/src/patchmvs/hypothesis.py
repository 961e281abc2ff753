"""Depth-hypothesis generation: stratified random initialization, per-stage
local perturbation, and propagation from adaptively sampled neighbors.

All sampling happens in inverse depth (uniform steps there correspond to
roughly uniform pixel motion).  For a usable range [d_min, d_max] the
inverse interval is [1/d_max, 1/d_min] with length L; perturbation windows
are expressed as a fraction of L.  Random draws are stratified: the target
interval is split into equal bins with exactly one uniform sample each.

Randomness comes from numpy streams keyed by (seed, stage, iteration), so a
run is bit-reproducible regardless of how the surrounding loops are
scheduled; drawn volumes are stored float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet, CoefficientShapeError
from .features import conv2d, leaky_relu
from .grid import bilinear_sample_many, shift_clamped

__all__ = [
    "StageConfig",
    "default_stage_configs",
    "OffsetField",
    "propagation_pattern",
    "evaluation_pattern",
    "init_random",
    "perturb",
    "propagation_offsets",
    "propagate",
]

# Samples are kept strictly inside their stratification bin so that float32
# storage of 1/inverse cannot push a value across a bin boundary.
_BIN_MARGIN = 1e-4

_RING8 = np.array(
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    dtype=np.float32,
)


@dataclass(frozen=True)
class StageConfig:
    """Per-stage knobs of the cascade.

    ``window_frac`` is the perturbation window as a fraction of the inverse
    depth range length; ``init_bins`` only matters on the stage that starts
    from random initialization.
    """

    stage: int
    iterations: int
    perturb_bins: int
    window_frac: float
    prop_samples: int
    eval_samples: int = 9
    groups: int = 4
    init_bins: int = 48
    prop_dilations: tuple[int, int] = (2, 4)
    eval_dilation: int = 1

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.perturb_bins < 1 or self.init_bins < 1:
            raise ValueError("hypothesis counts must be >= 1")
        if not self.window_frac > 0:
            raise ValueError("window_frac must be positive")
        propagation_pattern(self.prop_samples, self.prop_dilations)
        evaluation_pattern(self.eval_samples, self.eval_dilation)


def default_stage_configs() -> tuple[StageConfig, StageConfig, StageConfig]:
    """Stage settings used throughout: coarse-to-fine order (3, 2, 1).

    48 stratified initial samples; 2, 2, 1 iterations; 16/8/8 perturbation
    samples over windows covering 38%, 9% and 4% of the inverse range; 16/8/0
    propagated neighbors.
    """
    return (
        StageConfig(stage=3, iterations=2, perturb_bins=16, window_frac=0.38, prop_samples=16),
        StageConfig(stage=2, iterations=2, perturb_bins=8, window_frac=0.09, prop_samples=8),
        StageConfig(stage=1, iterations=1, perturb_bins=8, window_frac=0.04, prop_samples=0),
    )


@dataclass
class OffsetField:
    """Fixed grid offsets plus per-pixel displacements, both in pixels.

    ``base`` is (K, 2) as (dx, dy); ``deltas`` is (H, W, K, 2).
    """

    base: np.ndarray
    deltas: np.ndarray

    @property
    def count(self) -> int:
        return self.base.shape[0]

    def sample_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Absolute sample coordinates, two (H, W, K) arrays (x then y)."""
        h, w = self.deltas.shape[:2]
        xs = np.arange(w, dtype=np.float32)[None, :, None]
        ys = np.arange(h, dtype=np.float32)[:, None, None]
        return (
            xs + self.base[:, 0] + self.deltas[..., 0],
            ys + self.base[:, 1] + self.deltas[..., 1],
        )


def propagation_pattern(count: int, dilations: tuple[int, int] = (2, 4)) -> np.ndarray:
    """Fixed propagation grid: one or two 8-neighbor rings around the pixel."""
    if count == 0:
        return np.zeros((0, 2), dtype=np.float32)
    if count == 8:
        return _RING8 * np.float32(dilations[0])
    if count == 16:
        return np.concatenate(
            [_RING8 * np.float32(dilations[0]), _RING8 * np.float32(dilations[1])]
        )
    raise ValueError(f"no propagation grid pattern for {count} samples")


def evaluation_pattern(count: int = 9, dilation: int = 1) -> np.ndarray:
    """Fixed evaluation grid: the full 3x3 window (center included)."""
    if count != 9:
        raise ValueError(f"no evaluation grid pattern for {count} samples")
    offsets = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return np.array(offsets, dtype=np.float32) * np.float32(dilation)


def _stream(seed: int, stage: int, iteration: int, tag: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stage, iteration, tag))
    return np.random.default_rng(ss)


def _stratified(rng: np.random.Generator, shape: tuple, bins: int) -> np.ndarray:
    """Uniform samples in [0, 1), exactly one per 1/bins-wide slot (last axis)."""
    u = rng.random(shape + (bins,))
    u = np.clip(u, _BIN_MARGIN, 1.0 - _BIN_MARGIN)
    return (np.arange(bins) + u) / bins


def init_random(
    depth_range: tuple[float, float],
    width: int,
    height: int,
    bins: int,
    seed: int,
    stage: int = 3,
) -> np.ndarray:
    """Per-pixel stratified random depths covering the whole inverse range.

    Returns a (H, W, bins) float32 volume; hypothesis j of every pixel lies
    in the j-th of ``bins`` equal inverse-depth sub-intervals.
    """
    d_min, d_max = depth_range
    lo, hi = 1.0 / d_max, 1.0 / d_min
    rng = _stream(seed, stage, 0, tag=0)
    inv = lo + _stratified(rng, (height, width), bins) * (hi - lo)
    return (1.0 / inv).astype(np.float32)


def perturb(
    prev_depth: np.ndarray,
    window_frac: float,
    bins: int,
    depth_range: tuple[float, float],
    seed: int,
    stage: int,
    iteration: int,
) -> np.ndarray:
    """Stratified samples around the previous estimate, in inverse depth.

    The window is ``window_frac * L`` wide (L = inverse-range length),
    centered on 1/prev and clamped to the global inverse range before being
    split into ``bins`` strata.  Returns (H, W, bins) float32.
    """
    d_min, d_max = depth_range
    lo, hi = 1.0 / d_max, 1.0 / d_min
    length = hi - lo
    center = 1.0 / np.asarray(prev_depth, dtype=np.float64)
    half = 0.5 * window_frac * length
    win_lo = np.clip(center - half, lo, hi)
    win_hi = np.clip(center + half, lo, hi)
    rng = _stream(seed, stage, iteration, tag=1)
    u = _stratified(rng, prev_depth.shape, bins)
    inv = win_lo[..., None] + u * (win_hi - win_lo)[..., None]
    return (1.0 / inv).astype(np.float32)


# Candidate displacements for feature-guided snapping, center first so that
# ties keep the sample in place.
_SNAP_CANDIDATES = sorted(
    ((dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)),
    key=lambda c: (c[0] * c[0] + c[1] * c[1], c[1], c[0]),
)


def _feature_guided_deltas(features: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Snap each grid sample to the most self-similar spot in its 3x3 window.

    For every base offset the candidate with the highest cosine similarity
    to the center pixel's feature vector wins (strictly greater, so a
    constant map keeps zero deltas everywhere).
    """
    h, w = features.shape[:2]
    norm = np.sqrt(np.sum(features.astype(np.float64) ** 2, axis=-1))
    deltas = np.zeros((h, w, base.shape[0], 2), dtype=np.float32)
    for i, (bx, by) in enumerate(base.astype(int)):
        best = np.full((h, w), -np.inf)
        best_dx = np.zeros((h, w), dtype=np.float32)
        best_dy = np.zeros((h, w), dtype=np.float32)
        for dx, dy in _SNAP_CANDIDATES:
            shifted = shift_clamped(features, bx + dx, by + dy)
            dot = np.sum(shifted.astype(np.float64) * features, axis=-1)
            snorm = np.sqrt(np.sum(shifted.astype(np.float64) ** 2, axis=-1))
            cos = dot / (norm * snorm + 1e-12)
            better = cos > best
            best = np.where(better, cos, best)
            best_dx = np.where(better, np.float32(dx), best_dx)
            best_dy = np.where(better, np.float32(dy), best_dy)
        deltas[:, :, i, 0] = best_dx
        deltas[:, :, i, 1] = best_dy
    return deltas


def _offset_net_deltas(
    features: np.ndarray, coeffs: CoefficientSet, prefix: str, count: int
) -> np.ndarray:
    hidden = leaky_relu(
        conv2d(
            features,
            coeffs.get(f"{prefix}.conv0.weight"),
            coeffs.get(f"{prefix}.conv0.bias"),
            padding=1,
        )
    )
    raw = conv2d(
        hidden,
        coeffs.get(f"{prefix}.head.weight"),
        coeffs.get(f"{prefix}.head.bias"),
        padding=1,
    )
    if raw.shape[2] != 2 * count:
        raise CoefficientShapeError(
            f"tensor {prefix + '.head.weight'!r}: emits {raw.shape[2]} channels, "
            f"need {2 * count} for {count} samples"
        )
    h, w = raw.shape[:2]
    return raw.reshape(h, w, count, 2)


def propagation_offsets(
    features: np.ndarray,
    count: int,
    mode: str = "fixed",
    dilations: tuple[int, int] = (2, 4),
    coefficients: CoefficientSet | None = None,
    stage: int | None = None,
) -> OffsetField:
    """Sampling offsets used to gather neighbor hypotheses.

    Modes: ``fixed`` keeps the static grid; ``feature_guided`` snaps each
    grid point within a 3x3 window toward features similar to the center
    pixel; ``coefficients`` reads the displacements from a conv head
    (block ``prop{stage}``).
    """
    base = propagation_pattern(count, dilations)
    h, w = features.shape[:2]
    if count == 0 or mode == "fixed":
        deltas = np.zeros((h, w, base.shape[0], 2), dtype=np.float32)
    elif mode == "feature_guided":
        deltas = _feature_guided_deltas(features, base)
    elif mode == "coefficients":
        if coefficients is None or stage is None:
            raise ValueError("coefficient mode requires a CoefficientSet and stage")
        deltas = _offset_net_deltas(features, coefficients, f"prop{stage}", count)
    else:
        raise ValueError(f"unknown offset mode {mode!r}")
    return OffsetField(base=base, deltas=deltas)


def propagate(prev_depth: np.ndarray, offsets: OffsetField) -> np.ndarray:
    """Gather hypotheses from the previous depth map at the offset positions.

    Bilinear lookups; positions falling outside the map fall back to the
    pixel's own previous depth.  Returns (H, W, K) float32.
    """
    h, w = prev_depth.shape
    if offsets.count == 0:
        return np.zeros((h, w, 0), dtype=np.float32)
    xs, ys = offsets.sample_coords()
    values, valid = bilinear_sample_many(prev_depth, xs, ys)
    return np.where(valid, values, prev_depth[..., None]).astype(np.float32)
