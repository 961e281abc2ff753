"""Cascade orchestration: per-stage Patchmatch iterations, stage-to-stage
upsampling, and the final image-guided x2 refinement.

The cascade runs stages 3 -> 2 -> 1 (1/8 to 1/2 resolution).  The first
iteration of stage 3 evaluates stratified random hypotheses only and derives
the per-view visibility weights, which are then kept fixed (only upsampled).
Later iterations combine local perturbation with propagation from offset
neighbors; the last stage-1 iteration drops propagation and regresses in
inverse depth so the probability is sampled on a uniform inverse-depth grid,
which also yields the confidence map.  Per-pixel hypothesis counts never
depend on how wide the depth range is -- that is the engine's memory story,
and the per-iteration hypothesis byte counts are reported to make it
checkable.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cost as costmod
from .coeffs import CoefficientSet
from .features import FeaturePyramid, conv2d, conv_transpose2d, extract_pyramid, leaky_relu, to_intensity
from .geometry import CameraModel, camera_for_stage, relative_pose, warp_feature_map
from .grid import shift_clamped, upsample_x2
from .hypothesis import (
    StageConfig,
    default_stage_configs,
    init_random,
    perturb,
    propagate,
    propagation_offsets,
)

__all__ = [
    "PipelineConfig",
    "IterationSnapshot",
    "StageOutput",
    "DepthResult",
    "run_stage",
    "run_cascade",
    "refine",
    "DEFAULT_TEMPERATURE",
]

# Softmax sharpness applied to the deterministic similarity scores.  The
# regression op itself defaults to temperature 1; handcrafted similarities
# live on a small numeric range, so the pipeline sharpens them by default.
DEFAULT_TEMPERATURE = 0.1

# Joint-bilateral refinement constants (guide intensities live in [0, 1]).
REFINE_RADIUS = 2
REFINE_SIGMA_SPATIAL = 1.5
REFINE_SIGMA_RANGE = 0.06

_DEGENERATE_TRANSLATION = 1e-6
_DEGENERATE_ROTATION = 1e-6


@dataclass
class PipelineConfig:
    """Cascade settings; the defaults reproduce the standard configuration."""

    stages: tuple[StageConfig, ...] = field(default_factory=default_stage_configs)
    temperature: float = DEFAULT_TEMPERATURE
    adaptive_propagation: bool = True
    adaptive_evaluation: bool = True
    view_weighting: bool = True
    seed: int = 0
    feature_mode: str = "handcrafted"
    coefficients: CoefficientSet | None = None

    def __post_init__(self):
        if tuple(s.stage for s in self.stages) != (3, 2, 1):
            raise ValueError("stages must be configured coarse-to-fine as (3, 2, 1)")
        fracs = [s.window_frac for s in self.stages]
        if not (fracs[0] > fracs[1] > fracs[2] > 0):
            raise ValueError("perturbation windows must shrink with finer stages")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def stage(self, k: int) -> StageConfig:
        return next(s for s in self.stages if s.stage == k)


@dataclass
class IterationSnapshot:
    """Diagnostics for one Patchmatch iteration."""

    stage: int
    iteration: int
    depth: np.ndarray
    hypothesis_bytes: int


@dataclass
class StageOutput:
    depth: np.ndarray
    prob: np.ndarray
    hypotheses: np.ndarray
    view_weights: list[np.ndarray]
    confidence: np.ndarray | None
    snapshots: list[IterationSnapshot]
    seconds: float


@dataclass
class DepthResult:
    """Full-resolution depth and confidence plus per-stage diagnostics."""

    depth: np.ndarray
    confidence: np.ndarray
    snapshots: list[IterationSnapshot]
    view_weights: list[np.ndarray]
    seconds: dict[str, float]
    hypothesis_bytes: list[tuple[int, int, int]]  # (stage, iteration, bytes)
    depth_range: tuple[float, float]
    degenerate: bool = False


def _offset_mode(cfg: PipelineConfig, adaptive: bool, block: str) -> str:
    if not adaptive:
        return "fixed"
    if cfg.coefficients is not None and cfg.coefficients.has_block(block):
        return "coefficients"
    return "feature_guided"


def _stack_mode(cfg: PipelineConfig, block: str) -> str:
    if cfg.coefficients is not None and cfg.coefficients.has_block(block):
        return "coefficients"
    return "deterministic"


def run_stage(
    stage_cfg: StageConfig,
    prev_depth: np.ndarray | None,
    features: list[np.ndarray],
    cams: list[CameraModel],
    view_weights: list[np.ndarray] | None,
    cfg: PipelineConfig,
    final_stage: bool = False,
) -> StageOutput:
    """Run all Patchmatch iterations of one stage.

    ``features`` and ``cams`` hold the reference view first, already at this
    stage's resolution.  ``prev_depth`` of None triggers stratified random
    initialization (the cascade entry point); otherwise the stage refines
    the given estimate.  View weights are computed on the first iteration
    that runs without them and reused afterwards.
    """
    t0 = time.perf_counter()
    k = stage_cfg.stage
    ref_feat = features[0]
    h, w = ref_feat.shape[:2]
    if prev_depth is None and k != 3:
        raise ValueError(f"stage {k} needs a previous depth estimate")
    ref_cam = cams[0]
    depth_range = (ref_cam.depth_min, ref_cam.depth_max)
    inv_len = 1.0 / ref_cam.depth_min - 1.0 / ref_cam.depth_max
    rels = [relative_pose(ref_cam, c) for c in cams[1:]]

    prop_mode = _offset_mode(cfg, cfg.adaptive_propagation, f"prop{k}")
    eval_mode = _offset_mode(cfg, cfg.adaptive_evaluation, f"eval{k}")
    vw_mode = _stack_mode(cfg, "vw")
    score_mode = _stack_mode(cfg, "cost")
    sw_mode = _stack_mode(cfg, "sw")

    prop_field = None
    if stage_cfg.prop_samples:
        prop_field = propagation_offsets(
            ref_feat,
            stage_cfg.prop_samples,
            mode=prop_mode,
            dilations=stage_cfg.prop_dilations,
            coefficients=cfg.coefficients,
            stage=k,
        )
    eval_field = costmod.eval_offsets(
        ref_feat,
        stage_cfg.eval_samples,
        mode=eval_mode,
        dilation=stage_cfg.eval_dilation,
        coefficients=cfg.coefficients,
        stage=k,
    )

    snapshots: list[IterationSnapshot] = []
    depth = prev_depth
    prob = None
    hyps = None
    conf = None

    for it in range(1, stage_cfg.iterations + 1):
        last_iteration = final_stage and it == stage_cfg.iterations
        if depth is None:
            hyps = init_random(
                depth_range, w, h, stage_cfg.init_bins, cfg.seed, stage=k
            )
        else:
            parts = [
                perturb(
                    depth,
                    stage_cfg.window_frac,
                    stage_cfg.perturb_bins,
                    depth_range,
                    cfg.seed,
                    stage=k,
                    iteration=it,
                )
            ]
            if prop_field is not None and not last_iteration:
                parts.append(propagate(depth, prop_field))
            hyps = np.concatenate(parts, axis=2) if len(parts) > 1 else parts[0]

        similarities = []
        for feat, cam, rel in zip(features[1:], cams[1:], rels):
            warped, mask = warp_feature_map(feat, hyps, ref_cam, rel, cam.intrinsics)
            similarities.append(
                costmod.group_similarity(ref_feat, warped, mask, stage_cfg.groups)
            )

        if view_weights is None:
            view_weights = [
                costmod.view_weight(s, vw_mode, cfg.coefficients) for s in similarities
            ]
        used_weights = (
            view_weights
            if cfg.view_weighting
            else [np.ones((h, w), dtype=np.float32)] * len(similarities)
        )
        aggregated = costmod.aggregate_views(similarities, used_weights)
        score = costmod.similarity_to_score(aggregated, score_mode, cfg.coefficients)

        if cfg.adaptive_evaluation:
            feat_w, depth_w = costmod.spatial_weights(
                ref_feat,
                eval_field,
                hyps,
                inv_len,
                stage_cfg.groups,
                mode=sw_mode,
                coefficients=cfg.coefficients,
            )
        else:
            feat_w = np.ones((h, w, eval_field.count), dtype=np.float32)
            depth_w = np.ones((h, w, eval_field.count, hyps.shape[2]), dtype=np.float32)
        score = costmod.aggregate_spatial(score, eval_field, feat_w, depth_w)

        depth, prob = costmod.regress_depth(score, hyps, cfg.temperature)
        if last_iteration:
            depth = costmod.regress_inverse_depth(prob, hyps)
            conf = costmod.confidence(prob, hyps, depth)
        snapshots.append(
            IterationSnapshot(
                stage=k, iteration=it, depth=depth, hypothesis_bytes=hyps.nbytes
            )
        )

    return StageOutput(
        depth=depth,
        prob=prob,
        hypotheses=hyps,
        view_weights=view_weights,
        confidence=conf,
        snapshots=snapshots,
        seconds=time.perf_counter() - t0,
    )


def _joint_bilateral(
    depth01: np.ndarray, guide: np.ndarray, radius: int, sigma_spatial: float, sigma_range: float
) -> np.ndarray:
    num = np.zeros_like(depth01, dtype=np.float32)
    den = np.zeros_like(depth01, dtype=np.float32)
    inv2_r = np.float32(0.5 / (sigma_range * sigma_range))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            spatial = np.float32(
                np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_spatial * sigma_spatial))
            )
            diff = guide - shift_clamped(guide, dx, dy)
            weight = spatial * np.exp(-(diff * diff) * inv2_r)
            num += weight * shift_clamped(depth01, dx, dy)
            den += weight
    return num / den


def refine(
    depth: np.ndarray,
    image: np.ndarray,
    mode: str = "guided",
    coefficients: CoefficientSet | None = None,
) -> np.ndarray:
    """Upsample a half-resolution depth map x2 under image guidance.

    The depth is min-max scaled to [0, 1] first and rescaled afterwards, so
    behavior does not depend on the scene's depth scale.  ``guided`` applies
    a joint-bilateral filter (radius 2, spatial sigma 1.5 px, range sigma
    0.06 intensity units) to the bilinearly upsampled map, steered by the
    full-resolution image.  ``coefficients`` runs the residual net: feature
    branches over the scaled depth (with a stride-2 transposed conv) and the
    image, concatenated and projected to a residual that is added to the
    upsampled scaled depth.
    """
    lo = float(depth.min())
    hi = float(depth.max())
    scale = max(hi - lo, 1e-12)
    d01 = ((depth - lo) / scale).astype(np.float32)
    up = upsample_x2(d01)

    if mode == "guided":
        guide = to_intensity(image)
        if guide.shape != up.shape:
            raise ValueError(
                f"image {guide.shape} is not exactly twice the depth size {depth.shape}"
            )
        out01 = _joint_bilateral(
            up, guide, REFINE_RADIUS, REFINE_SIGMA_SPATIAL, REFINE_SIGMA_RANGE
        )
    elif mode == "coefficients":
        if coefficients is None:
            raise ValueError("coefficient mode requires a CoefficientSet")
        fd = leaky_relu(
            conv2d(
                d01,
                coefficients.get("ref.fd.conv0.weight"),
                coefficients.get("ref.fd.conv0.bias"),
                padding=1,
            )
        )
        fd = leaky_relu(
            conv_transpose2d(
                fd,
                coefficients.get("ref.fd.deconv.weight"),
                coefficients.get("ref.fd.deconv.bias"),
                stride=2,
                padding=1,
            )
        )
        from .features import _to_rgb

        fi = leaky_relu(
            conv2d(
                _to_rgb(image),
                coefficients.get("ref.fi.conv0.weight"),
                coefficients.get("ref.fi.conv0.bias"),
                padding=1,
            )
        )
        mix = np.concatenate([fd, fi], axis=2)
        mix = leaky_relu(
            conv2d(
                mix,
                coefficients.get("ref.mix.conv0.weight"),
                coefficients.get("ref.mix.conv0.bias"),
                padding=1,
            )
        )
        mix = leaky_relu(
            conv2d(
                mix,
                coefficients.get("ref.mix.conv1.weight"),
                coefficients.get("ref.mix.conv1.bias"),
                padding=1,
            )
        )
        residual = conv2d(
            mix,
            coefficients.get("ref.head.weight"),
            coefficients.get("ref.head.bias"),
            padding=1,
        )[..., 0]
        out01 = up + residual
    else:
        raise ValueError(f"unknown refinement mode {mode!r}")
    return (out01 * np.float32(scale) + np.float32(lo)).astype(np.float32)


def _is_degenerate(cams: list[CameraModel]) -> bool:
    ref = cams[0]
    for cam in cams[1:]:
        if np.linalg.norm(cam.center - ref.center) > _DEGENERATE_TRANSLATION:
            return False
        rel = cam.rotation @ ref.rotation.T
        angle = np.arccos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0))
        if angle > _DEGENERATE_ROTATION:
            return False
    return True


def _pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    h, w = image.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if not ph and not pw:
        return image
    pad = ((0, ph), (0, pw)) + ((0, 0),) * (image.ndim - 2)
    return np.pad(image, pad, mode="edge")


def run_cascade(
    images: list[np.ndarray], cams: list[CameraModel], cfg: PipelineConfig | None = None
) -> DepthResult:
    """Estimate the reference view's depth map from N posed images.

    ``images[0]`` / ``cams[0]`` is the reference view.  Inputs of any size
    are edge-padded to a multiple of 8 internally and the outputs cropped
    back.  Returns the refined full-resolution depth (clipped to the
    reference camera's range), a confidence map, and diagnostics.
    """
    cfg = cfg or PipelineConfig()
    if len(images) < 2:
        raise ValueError("need the reference plus at least one source view")
    if len(images) != len(cams):
        raise ValueError("one camera per image required")
    shape0 = images[0].shape[:2]
    for img in images[1:]:
        if img.shape[:2] != shape0:
            raise ValueError("all views must share the same image size")

    degenerate = _is_degenerate(cams)
    if degenerate:
        warnings.warn(
            "all source cameras coincide with the reference (no baseline); "
            "depth is unconstrained",
            RuntimeWarning,
            stacklevel=2,
        )

    orig_h, orig_w = shape0
    padded = [_pad_to_multiple(np.asarray(im, dtype=np.float32), 8) for im in images]

    seconds: dict[str, float] = {}
    t0 = time.perf_counter()
    pyramids: list[FeaturePyramid] = [
        extract_pyramid(im, cfg.feature_mode, cfg.coefficients) for im in padded
    ]
    seconds["features"] = time.perf_counter() - t0

    depth = None
    view_weights = None
    snapshots: list[IterationSnapshot] = []
    bytes_log: list[tuple[int, int, int]] = []
    confidence = None

    for stage_cfg in cfg.stages:
        k = stage_cfg.stage
        feats = [p.stages[k] for p in pyramids]
        cams_k = [camera_for_stage(c, k) for c in cams]
        if depth is not None:
            depth = upsample_x2(depth)
            view_weights = [upsample_x2(vw) for vw in view_weights]
        out = run_stage(
            stage_cfg,
            depth,
            feats,
            cams_k,
            view_weights,
            cfg,
            final_stage=(k == 1),
        )
        depth = out.depth
        view_weights = out.view_weights
        confidence = out.confidence
        snapshots.extend(out.snapshots)
        bytes_log.extend((s.stage, s.iteration, s.hypothesis_bytes) for s in out.snapshots)
        seconds[f"stage{k}"] = out.seconds

    t0 = time.perf_counter()
    refine_mode = (
        "coefficients"
        if cfg.coefficients is not None and cfg.coefficients.has_block("ref")
        else "guided"
    )
    full = refine(depth, pyramids[0].guidance, refine_mode, cfg.coefficients)
    conf_full = upsample_x2(confidence)
    seconds["refine"] = time.perf_counter() - t0

    full = np.clip(full[:orig_h, :orig_w], cams[0].depth_min, cams[0].depth_max)
    conf_full = conf_full[:orig_h, :orig_w]
    return DepthResult(
        depth=full.astype(np.float32),
        confidence=conf_full.astype(np.float32),
        snapshots=snapshots,
        view_weights=view_weights,
        seconds=seconds,
        hypothesis_bytes=bytes_log,
        depth_range=(cams[0].depth_min, cams[0].depth_max),
        degenerate=degenerate,
    )
