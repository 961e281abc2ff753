"""Matching cost computation and depth regression.

Per source view, warped features are compared against the reference with
group-wise correlation: channels split into G groups, similarity of group g
is (G/C) times the within-group inner product.  Views are then blended by
per-pixel view weights (a visibility proxy, computed once from the diverse
initial hypotheses and kept fixed), group similarities are projected to a
scalar score per hypothesis, scores are spatially aggregated over an
adaptive window, and depth is regressed as the softmax expectation over
hypotheses.  The internal convention is "higher score = better match"; the
equivalent cost is the negated score.

Where a small learned stack would normally act (view weight, score
projection, spatial feature weight), a deterministic default replaces it:
logistic of the group-mean similarity.  Each stack can instead run from a
loadable coefficient block.
"""

from __future__ import annotations

import numpy as np

from .coeffs import CoefficientSet
from .features import sigmoid
from .grid import bilinear_sample_many
from .hypothesis import OffsetField, evaluation_pattern, _feature_guided_deltas, _offset_net_deltas

__all__ = [
    "WEIGHT_SUM_EPS",
    "DEPTH_WEIGHT_SIGMA",
    "DEPTH_WEIGHT_BETA",
    "group_similarity",
    "view_probability",
    "view_weight",
    "aggregate_views",
    "similarity_to_score",
    "eval_offsets",
    "spatial_weights",
    "aggregate_spatial",
    "regress_depth",
    "regress_inverse_depth",
    "confidence",
]

WEIGHT_SUM_EPS = 1e-6

# Depth-similarity weight: logistic(sigma - beta * |inverse depth gap| / L),
# i.e. ~0.88 for identical depths and ~3e-4 for a full-range jump.
DEPTH_WEIGHT_SIGMA = 2.0
DEPTH_WEIGHT_BETA = 10.0


def group_similarity(
    ref_features: np.ndarray,
    warped: np.ndarray,
    mask: np.ndarray,
    groups: int,
) -> np.ndarray:
    """Group-wise correlation of reference features with warped source ones.

    Args:
        ref_features: (H, W, C).
        warped: (H, W, D, C) source features resampled per hypothesis.
        mask: (H, W, D) validity; masked entries come out exactly 0.
        groups: G, must divide C.

    Returns:
        (H, W, D, G) float32 similarity volume.
    """
    h, w, c = ref_features.shape
    if c % groups:
        raise ValueError(f"channels {c} not divisible by {groups} groups")
    per = c // groups
    d = warped.shape[2]
    ref = ref_features.reshape(h, w, groups, per)
    src = warped.reshape(h, w, d, groups, per)
    sim = np.einsum("hwgp,hwdgp->hwdg", ref, src, dtype=np.float32)
    sim *= np.float32(groups / c)
    return np.where(mask[..., None], sim, np.float32(0.0))


def _pointwise_stack(
    values: np.ndarray, coeffs: CoefficientSet, prefix: str, final: str
) -> np.ndarray:
    """Tiny per-entry MLP over the trailing (group) axis: conv0 -> head."""
    from .features import leaky_relu

    w0 = coeffs.get(f"{prefix}.conv0.weight")[:, :, 0, 0]
    b0 = coeffs.get(f"{prefix}.conv0.bias")
    w1 = coeffs.get(f"{prefix}.head.weight")[:, :, 0, 0]
    b1 = coeffs.get(f"{prefix}.head.bias")
    hidden = leaky_relu(values @ w0.T + b0)
    out = (hidden @ w1.T + b1)[..., 0]
    return sigmoid(out) if final == "sigmoid" else out.astype(np.float32)


def view_probability(
    similarity: np.ndarray,
    mode: str = "deterministic",
    coefficients: CoefficientSet | None = None,
) -> np.ndarray:
    """Per-hypothesis visibility confidence in [0, 1], shape (H, W, D).

    Deterministic mode squashes the group-mean similarity through a
    logistic; coefficient mode runs the ``vw`` stack per (pixel, hypothesis).
    """
    if mode == "coefficients":
        if coefficients is None:
            raise ValueError("coefficient mode requires a CoefficientSet")
        return _pointwise_stack(similarity, coefficients, "vw", final="sigmoid")
    return sigmoid(similarity.mean(axis=-1))


def view_weight(
    similarity: np.ndarray,
    mode: str = "deterministic",
    coefficients: CoefficientSet | None = None,
) -> np.ndarray:
    """Pixel-wise view weight: best visibility confidence over hypotheses."""
    return view_probability(similarity, mode, coefficients).max(axis=2)


def aggregate_views(
    similarities: list[np.ndarray], weights: list[np.ndarray]
) -> np.ndarray:
    """Visibility-weighted blend of per-view similarity volumes.

    ``sum_i w_i S_i / sum_i w_i`` with the denominator floored at a small
    epsilon, so the result is exactly S_1 for a single positive-weight view
    and invariant to uniform rescaling of all weights.
    """
    if not similarities:
        raise ValueError("need at least one source view")
    if len(similarities) != len(weights):
        raise ValueError("one weight map per similarity volume required")
    num = np.zeros_like(similarities[0], dtype=np.float32)
    den = np.zeros(similarities[0].shape[:2], dtype=np.float32)
    for sim, wgt in zip(similarities, weights):
        w32 = np.asarray(wgt, dtype=np.float32)
        num += w32[..., None, None] * sim
        den += w32
    den = np.maximum(den, np.float32(WEIGHT_SUM_EPS))
    return num / den[..., None, None]


def similarity_to_score(
    aggregated: np.ndarray,
    mode: str = "deterministic",
    coefficients: CoefficientSet | None = None,
) -> np.ndarray:
    """Project group similarities to one score per pixel and hypothesis."""
    if mode == "coefficients":
        if coefficients is None:
            raise ValueError("coefficient mode requires a CoefficientSet")
        return _pointwise_stack(aggregated, coefficients, "cost", final="linear")
    return aggregated.mean(axis=-1, dtype=np.float32)


def eval_offsets(
    features: np.ndarray,
    count: int = 9,
    mode: str = "fixed",
    dilation: int = 1,
    coefficients: CoefficientSet | None = None,
    stage: int | None = None,
) -> OffsetField:
    """Sampling offsets for spatial cost aggregation (3x3 window variants).

    Same modes as propagation offsets; coefficient mode reads block
    ``eval{stage}``.
    """
    base = evaluation_pattern(count, dilation)
    h, w = features.shape[:2]
    if mode == "fixed":
        deltas = np.zeros((h, w, count, 2), dtype=np.float32)
    elif mode == "feature_guided":
        deltas = _feature_guided_deltas(features, base)
    elif mode == "coefficients":
        if coefficients is None or stage is None:
            raise ValueError("coefficient mode requires a CoefficientSet and stage")
        deltas = _offset_net_deltas(features, coefficients, f"eval{stage}", count)
    else:
        raise ValueError(f"unknown offset mode {mode!r}")
    return OffsetField(base=base, deltas=deltas)


def spatial_weights(
    features: np.ndarray,
    offsets: OffsetField,
    hypotheses: np.ndarray,
    inverse_range_length: float,
    groups: int,
    mode: str = "deterministic",
    coefficients: CoefficientSet | None = None,
    sigma: float = DEPTH_WEIGHT_SIGMA,
    beta: float = DEPTH_WEIGHT_BETA,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature- and depth-similarity weights for spatial aggregation.

    Returns ``(feature_w, depth_w)`` of shapes (H, W, K) and (H, W, K, D).
    The feature weight correlates each sampled neighbor's features with the
    center pixel (group-wise, logistic of the group mean, or the ``sw``
    stack in coefficient mode); the depth weight falls off with the
    inverse-depth gap between the neighbor's and the center's j-th
    hypothesis, normalized by the range length.
    """
    h, w, c = features.shape
    per = c // groups
    xs, ys = offsets.sample_coords()
    sampled, _ = bilinear_sample_many(features, xs, ys)  # (H, W, K, C)
    ref = features.reshape(h, w, groups, per)
    nbr = sampled.reshape(h, w, offsets.count, groups, per)
    corr = np.einsum("hwkgp,hwgp->hwkg", nbr, ref, dtype=np.float32)
    corr *= np.float32(groups / c)
    if mode == "coefficients":
        if coefficients is None:
            raise ValueError("coefficient mode requires a CoefficientSet")
        feature_w = _pointwise_stack(corr, coefficients, "sw", final="sigmoid")
    else:
        feature_w = sigmoid(corr.mean(axis=-1))

    center_inv = 1.0 / hypotheses  # (H, W, D)
    sampled_h, _ = bilinear_sample_many(hypotheses, xs, ys)  # (H, W, K, D)
    gap = np.abs(1.0 / sampled_h - center_inv[:, :, None, :]) / np.float32(
        inverse_range_length
    )
    depth_w = sigmoid(np.float32(sigma) - np.float32(beta) * gap)
    return feature_w, depth_w


def aggregate_spatial(
    score: np.ndarray,
    offsets: OffsetField,
    feature_w: np.ndarray,
    depth_w: np.ndarray,
) -> np.ndarray:
    """Weighted spatial average of scores over the offset window.

    Scores are sampled bilinearly at each offset position; samples outside
    the grid are dropped from numerator and denominator alike, and pixels
    whose window is entirely invalid (or zero-weight) keep their own score.
    """
    sampled, valid = bilinear_sample_many(score, *offsets.sample_coords())
    weight = feature_w[..., None] * depth_w * valid[..., None]
    num = np.sum(weight * sampled, axis=2, dtype=np.float32)
    den = np.sum(weight, axis=2, dtype=np.float32)
    return np.where(den > 0, num / np.maximum(den, np.float32(1e-20)), score)


def regress_depth(
    score: np.ndarray, hypotheses: np.ndarray, temperature: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-expected depth over the hypothesis axis.

    Returns ``(depth, probability)`` of shapes (H, W) and (H, W, D); the
    probability is softmax(score / temperature), invariant to per-pixel
    score shifts, and the depth always lies inside the per-pixel hypothesis
    hull.
    """
    z = score.astype(np.float32) / np.float32(temperature)
    z -= z.max(axis=2, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=2, keepdims=True)
    depth = np.sum(p * hypotheses, axis=2, dtype=np.float32)
    return depth.astype(np.float32), p.astype(np.float32)


def regress_inverse_depth(prob: np.ndarray, hypotheses: np.ndarray) -> np.ndarray:
    """Expectation in inverse depth: 1 / sum_j P_j / d_j (harmonic blend).

    Used for the last refinement-feeding iteration, where hypotheses are
    uniform in inverse depth; never exceeds the arithmetic expectation.
    """
    inv = np.sum(prob / hypotheses, axis=2, dtype=np.float64)
    return (1.0 / inv).astype(np.float32)


def confidence(
    prob: np.ndarray, hypotheses: np.ndarray, depth: np.ndarray
) -> np.ndarray:
    """Probability mass of the four hypotheses nearest the estimate.

    Nearness is measured in inverse depth.  With four or fewer hypotheses
    everything is counted and the confidence is 1.
    """
    h, w, d = prob.shape
    if d <= 4:
        return np.ones((h, w), dtype=np.float32)
    gap = np.abs(1.0 / hypotheses - (1.0 / depth)[..., None])
    nearest = np.argpartition(gap, 3, axis=2)[:, :, :4]
    conf = np.take_along_axis(prob, nearest, axis=2).sum(axis=2, dtype=np.float32)
    return np.clip(conf, 0.0, 1.0).astype(np.float32)
