"""Multi-scale feature extraction and the shared convolution primitives.

Two modes produce the per-view feature pyramid (stages 1..3 at 1/2, 1/4 and
1/8 resolution):

* ``handcrafted`` (default, no weights needed): 8 channels per stage, built
  from the stage's mean-pooled image -- raw intensity, horizontal and
  vertical gradients, and five mean-centered 3x3 neighborhood differences.
  The difference channels stay continuous (unlike a binary census signature)
  so bilinearly interpolated lookups remain meaningful.
* ``coefficients``: a fixed strided-convolution trunk with lateral 1x1
  merges and bilinear top-down upsampling, run from a loaded
  :class:`~patchmvs.coeffs.CoefficientSet` (layer list in that module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet, CoefficientShapeError
from .grid import downsample_x2, shift_clamped, upsample_x2

__all__ = [
    "LEAKY_SLOPE",
    "HANDCRAFTED_CHANNELS",
    "FeaturePyramid",
    "conv2d",
    "conv_transpose2d",
    "leaky_relu",
    "sigmoid",
    "to_intensity",
    "handcrafted_features",
    "extract_pyramid",
]

LEAKY_SLOPE = 0.1
HANDCRAFTED_CHANNELS = 8

# Offsets whose mean-centered values form the neighborhood-difference
# channels: the pixel itself plus its four axis neighbors.
_DIFF_OFFSETS = ((0, 0), (1, 0), (0, 1), (-1, 0), (0, -1))

# Contrast normalization of the difference channels.  A binary census
# signature is fully contrast-invariant; tanh(k * diff) is its continuous
# stand-in, and without it weakly textured pyramid levels produce score
# spreads too small for the probability regression to act on.
CENSUS_SHARPNESS = 80.0


@dataclass
class FeaturePyramid:
    """Per-view feature grids keyed by stage, plus the full-res guidance image."""

    stages: dict[int, np.ndarray]  # stage k -> (H/2^k, W/2^k, C)
    guidance: np.ndarray  # original image, (H, W) or (H, W, 3)

    @property
    def channels(self) -> int:
        any_stage = next(iter(self.stages.values()))
        return any_stage.shape[2]


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, np.float32(slope) * x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float32)))


def _as_hwc(image: np.ndarray) -> np.ndarray:
    return image[..., None] if image.ndim == 2 else image


def conv2d(
    image: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """2-D cross-correlation (no kernel flip) with zero padding.

    ``kernel`` is (Cout, Cin, kh, kw); a bare (kh, kw) kernel is shorthand
    for single-channel in and out, returning a 2-D result for 2-D input.
    Output spatial size is ``(H + 2*padding - kh) // stride + 1`` per axis.
    """
    kernel = np.asarray(kernel, dtype=np.float32)
    squeeze = kernel.ndim == 2 and image.ndim == 2
    if kernel.ndim == 2:
        kernel = kernel[None, None]
    data = _as_hwc(np.asarray(image, dtype=np.float32))
    cout, cin, kh, kw = kernel.shape
    if data.shape[2] != cin:
        raise ValueError(
            f"kernel expects {cin} input channels, image has {data.shape[2]}"
        )
    if padding:
        data = np.pad(data, ((padding, padding), (padding, padding), (0, 0)))
    h, w = data.shape[:2]
    if h < kh or w < kw:
        raise ValueError("kernel larger than padded image")
    windows = np.lib.stride_tricks.sliding_window_view(data, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # (H', W', Cin, kh, kw)
    out = np.einsum(
        "hwcij,ocij->hwo", windows, kernel, dtype=np.float32, casting="same_kind"
    )
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float32)
    out = np.ascontiguousarray(out, dtype=np.float32)
    return out[..., 0] if squeeze else out


def conv_transpose2d(
    image: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 2,
    padding: int = 1,
) -> np.ndarray:
    """Transposed convolution (the adjoint of strided conv2d).

    ``kernel`` is (Cin, Cout, kh, kw); output spatial size is
    ``(H - 1) * stride - 2 * padding + kh`` per axis.
    """
    kernel = np.asarray(kernel, dtype=np.float32)
    cin, cout, kh, kw = kernel.shape
    data = _as_hwc(np.asarray(image, dtype=np.float32))
    h, w = data.shape[:2]
    stuffed = np.zeros(
        ((h - 1) * stride + 1, (w - 1) * stride + 1, data.shape[2]), dtype=np.float32
    )
    stuffed[::stride, ::stride] = data
    flipped = np.transpose(kernel, (1, 0, 2, 3))[:, :, ::-1, ::-1]
    return conv2d(stuffed, flipped, bias=bias, stride=1, padding=max(kh, kw) - 1 - padding)


def to_intensity(image: np.ndarray) -> np.ndarray:
    """Collapse an image to a single (H, W) intensity channel (Rec. 709 luma)."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    if img.shape[2] == 3:
        return (
            np.float32(0.2126) * img[..., 0]
            + np.float32(0.7152) * img[..., 1]
            + np.float32(0.0722) * img[..., 2]
        )
    raise ValueError(f"expected 1 or 3 channels, got {img.shape[2]}")


def _box_mean3(img: np.ndarray) -> np.ndarray:
    acc = np.zeros(img.shape, dtype=np.float64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc += shift_clamped(img, dx, dy)
    return (acc / 9.0).astype(np.float32)


def handcrafted_features(intensity: np.ndarray) -> np.ndarray:
    """8-channel descriptor of a (H, W) intensity image.

    Channels: intensity, d/dx, d/dy, then tanh-squashed value-at-offset
    minus 3x3 local mean for the offsets (0,0), (1,0), (0,1), (-1,0),
    (0,-1).  Borders use clamped (replicated) neighborhoods, so constant
    images give zeros in every channel but the first.
    """
    img = np.asarray(intensity, dtype=np.float32)
    gy, gx = np.gradient(img)
    mean3 = _box_mean3(img)
    channels = [img, gx.astype(np.float32), gy.astype(np.float32)]
    k = np.float32(CENSUS_SHARPNESS)
    for dx, dy in _DIFF_OFFSETS:
        channels.append(np.tanh(k * (shift_clamped(img, dx, dy) - mean3)))
    return np.stack(channels, axis=-1)


def _to_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        return np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    return img


def _fpn_forward(image: np.ndarray, coeffs: CoefficientSet) -> dict[int, np.ndarray]:
    def block(x, name, stride):
        return leaky_relu(
            conv2d(
                x,
                coeffs.get(f"{name}.weight"),
                coeffs.get(f"{name}.bias"),
                stride=stride,
                padding=1,
            )
        )

    def lateral(x, name):
        return conv2d(
            x, coeffs.get(f"{name}.weight"), coeffs.get(f"{name}.bias"), padding=0
        )

    t0 = block(_to_rgb(image), "fpn.conv0", 1)
    t1 = block(t0, "fpn.conv1", 2)
    t2 = block(t1, "fpn.conv2", 2)
    t3 = block(t2, "fpn.conv3", 2)
    p3 = lateral(t3, "fpn.lat3")
    p2 = lateral(t2, "fpn.lat2") + upsample_x2(p3)
    p1 = lateral(t1, "fpn.lat1") + upsample_x2(p2)
    return {1: p1, 2: p2, 3: p3}


def extract_pyramid(
    image: np.ndarray,
    mode: str = "handcrafted",
    coefficients: CoefficientSet | None = None,
) -> FeaturePyramid:
    """Build the 3-stage feature pyramid for one view.

    The image must be single- or three-channel with both dimensions
    divisible by 8 (callers pad beforehand).
    """
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    if h % 8 or w % 8:
        raise ValueError(f"image size {w}x{h} not divisible by 8")

    if mode == "handcrafted":
        level = to_intensity(img)
        stages: dict[int, np.ndarray] = {}
        for k in (1, 2, 3):
            level = downsample_x2(level)
            stages[k] = handcrafted_features(level)
    elif mode == "coefficients":
        if coefficients is None:
            raise ValueError("coefficient mode requires a CoefficientSet")
        if not coefficients.has_block("fpn"):
            raise CoefficientShapeError("coefficient set has no 'fpn' block")
        stages = _fpn_forward(img, coefficients)
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")
    return FeaturePyramid(stages=stages, guidance=img)
