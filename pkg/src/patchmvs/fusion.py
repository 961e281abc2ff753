"""Depth-map filtering and fusion into a point cloud, plus PLY I/O.

A pixel survives photometric filtering when its confidence clears a
threshold, and geometric filtering when enough source views agree with it:
reprojecting the pixel into a source view, reading that view's depth there,
and projecting back must land within ``reproj_max`` pixels of the start and
within ``relative_depth_max`` of the starting depth.  Surviving pixels are
fused by averaging the reference depth with the round-trip depths of all
consistent partners; partners are marked consumed so a surface point is
emitted only once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, back_project, project_points, relative_pose, warp_points

__all__ = [
    "FilterParams",
    "FusedCloud",
    "photometric_filter",
    "geometric_filter",
    "fuse",
    "PlyError",
    "PlyHeaderError",
    "PlyPayloadError",
    "write_ply",
    "read_ply",
]


@dataclass(frozen=True)
class FilterParams:
    """Thresholds for photometric and geometric consistency filtering."""

    conf_min: float = 0.3
    reproj_max: float = 1.0
    relative_depth_max: float = 0.01
    min_consistent_views: int = 2

    def __post_init__(self):
        if not (0.0 <= self.conf_min):
            raise ValueError("conf_min must be non-negative")
        if self.reproj_max <= 0 or self.relative_depth_max <= 0:
            raise ValueError("consistency thresholds must be positive")
        if self.min_consistent_views < 1:
            raise ValueError("min_consistent_views must be >= 1")


@dataclass
class FusedCloud:
    """Point cloud with colors and per-point consistent-view counts."""

    points: np.ndarray  # (N, 3) float32
    colors: np.ndarray  # (N, 3) uint8
    support: np.ndarray  # (N,) int32

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "FusedCloud":
        return FusedCloud(
            points=np.zeros((0, 3), dtype=np.float32),
            colors=np.zeros((0, 3), dtype=np.uint8),
            support=np.zeros((0,), dtype=np.int32),
        )


def photometric_filter(
    depth: np.ndarray, confidence: np.ndarray, conf_min: float
) -> np.ndarray:
    """Boolean mask of pixels whose confidence reaches ``conf_min``."""
    if depth.shape != confidence.shape:
        raise ValueError("depth and confidence sizes differ")
    return confidence >= conf_min


def _round_trip(
    depth_r: np.ndarray,
    cam_r: CameraModel,
    depth_s: np.ndarray,
    cam_s: CameraModel,
):
    """Reproject every reference pixel through the source view and back.

    Returns (consistent-ready pieces): source pixel indices (iu, iv), their
    validity, the depth seen when projecting the source surface point back
    into the reference, and the reference-pixel reprojection error.
    """
    h, w = depth_r.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    rel = relative_pose(cam_r, cam_s)
    u, v, _, ok = warp_points(
        np.broadcast_to(xs, depth_r.shape),
        np.broadcast_to(ys, depth_r.shape),
        depth_r,
        cam_r,
        rel,
        cam_s.intrinsics,
    )
    iu = np.round(u).astype(np.intp)
    iv = np.round(v).astype(np.intp)
    inside = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    iu_c = np.clip(iu, 0, w - 1)
    iv_c = np.clip(iv, 0, h - 1)
    d_s = depth_s[iv_c, iu_c]
    ok = ok & inside & (depth_r > 0) & (d_s > 0)

    # Lift the matched source pixel at its own depth and view it from the
    # reference camera.
    Kinv = np.linalg.inv(cam_s.intrinsics)
    X = (Kinv[0, 0] * iu_c + Kinv[0, 1] * iv_c + Kinv[0, 2]) * d_s
    Y = (Kinv[1, 1] * iv_c + Kinv[1, 2]) * d_s
    pts_world = (
        np.stack([X, Y, d_s], axis=-1) - cam_s.translation
    ) @ cam_s.rotation
    xr, yr, z_back = project_points(pts_world, cam_r)
    err = np.hypot(xr - xs, yr - ys)
    ok = ok & (z_back > 0)
    return iu_c, iv_c, ok, z_back, err


def _pair_consistent(depth_r, cam_r, depth_s, cam_s, params: FilterParams):
    iu, iv, ok, z_back, err = _round_trip(depth_r, cam_r, depth_s, cam_s)
    rel_gap = np.abs(z_back - depth_r) / np.maximum(depth_r, 1e-12)
    consistent = ok & (err <= params.reproj_max) & (rel_gap <= params.relative_depth_max)
    return consistent, z_back, iu, iv


def geometric_filter(
    depths: list[np.ndarray], cams: list[CameraModel], params: FilterParams
) -> list[np.ndarray]:
    """Per-view masks of pixels consistent with enough other views."""
    masks = []
    for r, (depth_r, cam_r) in enumerate(zip(depths, cams)):
        count = np.zeros(depth_r.shape, dtype=np.int32)
        for s, (depth_s, cam_s) in enumerate(zip(depths, cams)):
            if s == r:
                continue
            consistent, _, _, _ = _pair_consistent(depth_r, cam_r, depth_s, cam_s, params)
            count += consistent
        masks.append(count >= params.min_consistent_views)
    return masks


def _colors_at(image: np.ndarray, keep: np.ndarray) -> np.ndarray:
    vals = image[keep]
    if vals.ndim == 1:
        vals = np.repeat(vals[:, None], 3, axis=1)
    return np.clip(np.round(vals * 255.0), 0, 255).astype(np.uint8)


def fuse(
    depths: list[np.ndarray],
    masks: list[np.ndarray],
    images: list[np.ndarray],
    cams: list[CameraModel],
    params: FilterParams | None = None,
) -> FusedCloud:
    """Back-project all surviving pixels into one deduplicated cloud.

    Views are processed in index order; when a pixel is emitted, the source
    pixels it is consistent with are marked consumed so later views do not
    emit the same surface point again.  The fused depth is the mean of the
    reference depth and all consistent round-trip depths, colored from the
    reference image.
    """
    params = params or FilterParams()
    consumed = [np.zeros(d.shape, dtype=bool) for d in depths]
    pts_parts: list[np.ndarray] = []
    color_parts: list[np.ndarray] = []
    support_parts: list[np.ndarray] = []

    for r, (depth_r, cam_r) in enumerate(zip(depths, cams)):
        keep = masks[r] & ~consumed[r] & (depth_r > 0)
        depth_acc = depth_r.astype(np.float64).copy()
        count = np.ones(depth_r.shape, dtype=np.int32)
        partners = np.zeros(depth_r.shape, dtype=np.int32)
        for s, (depth_s, cam_s) in enumerate(zip(depths, cams)):
            if s == r:
                continue
            consistent, z_back, iu, iv = _pair_consistent(
                depth_r, cam_r, depth_s, cam_s, params
            )
            use = consistent & keep
            depth_acc += np.where(use, z_back, 0.0)
            count += use
            partners += consistent
            consumed[s][iv[use], iu[use]] = True
        if not keep.any():
            continue
        fused_depth = (depth_acc / count).astype(np.float32)
        world = back_project(fused_depth, cam_r)
        pts_parts.append(world[keep].astype(np.float32))
        color_parts.append(_colors_at(images[r], keep))
        support_parts.append(partners[keep])

    if not pts_parts:
        return FusedCloud.empty()
    return FusedCloud(
        points=np.concatenate(pts_parts),
        colors=np.concatenate(color_parts),
        support=np.concatenate(support_parts).astype(np.int32),
    )


class PlyError(ValueError):
    """Base class for malformed PLY files."""


class PlyHeaderError(PlyError):
    """Header missing, malformed, or using an unsupported layout."""


class PlyPayloadError(PlyError):
    """Vertex data shorter than the header promises."""


_PLY_PROPERTIES = (
    b"property float x",
    b"property float y",
    b"property float z",
    b"property uchar red",
    b"property uchar green",
    b"property uchar blue",
)

_VERTEX_DTYPE = np.dtype(
    [("xyz", "<f4", 3), ("rgb", "u1", 3)]
)


def write_ply(cloud: FusedCloud, path) -> None:
    """Write a binary little-endian PLY with float xyz and uchar rgb."""
    n = len(cloud)
    record = np.empty(n, dtype=_VERTEX_DTYPE)
    record["xyz"] = cloud.points.astype("<f4")
    record["rgb"] = cloud.colors
    with open(path, "wb") as f:
        f.write(b"ply\nformat binary_little_endian 1.0\n")
        f.write(f"element vertex {n}\n".encode("ascii"))
        for prop in _PLY_PROPERTIES:
            f.write(prop + b"\n")
        f.write(b"end_header\n")
        f.write(record.tobytes())


def read_ply(path) -> FusedCloud:
    """Read a PLY written by :func:`write_ply` (support counts reset to 1)."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyHeaderError(f"{path}: not a PLY file")
    header_lines = data[:end].split(b"\n")
    if b"format binary_little_endian 1.0" not in header_lines:
        raise PlyHeaderError(f"{path}: only binary little-endian PLY is supported")
    count = None
    props = []
    for line in header_lines:
        if line.startswith(b"element vertex"):
            try:
                count = int(line.split()[-1])
            except ValueError as exc:
                raise PlyHeaderError(f"{path}: bad vertex count") from exc
        elif line.startswith(b"element "):
            raise PlyHeaderError(f"{path}: unsupported element {line!r}")
        elif line.startswith(b"property"):
            props.append(line)
    if count is None:
        raise PlyHeaderError(f"{path}: missing vertex element")
    if tuple(props) != _PLY_PROPERTIES:
        raise PlyHeaderError(f"{path}: unsupported property layout")
    payload = data[end + len(b"end_header\n") :]
    need = count * _VERTEX_DTYPE.itemsize
    if len(payload) < need:
        raise PlyPayloadError(
            f"{path}: truncated vertex data, expected {need} bytes, got {len(payload)}"
        )
    record = np.frombuffer(payload[:need], dtype=_VERTEX_DTYPE)
    return FusedCloud(
        points=record["xyz"].astype(np.float32),
        colors=record["rgb"].astype(np.uint8),
        support=np.ones(count, dtype=np.int32),
    )
