"""Camera models, relative transforms, and per-hypothesis reprojection.

Poses are stored world-to-camera, so a world point X maps to camera
coordinates as ``R @ X + t``.  The plane-sweep warp reprojects a reference
pixel ``p`` (homogeneous) at depth ``d`` into a source view as
``K_src @ (R_rel @ (K_ref^-1 @ p * d) + t_rel)``, followed by explicit
dehomogenization; the third coordinate before division is the source-frame
depth.  Points at or behind the source camera plane (z <= 1e-6) are flagged
invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BEHIND_EPS",
    "CameraModel",
    "RelativePose",
    "relative_pose",
    "camera_for_stage",
    "warp_points",
    "warp_pixel",
    "warp_feature_map",
    "back_project",
    "project_points",
    "CameraFileError",
    "read_camera_file",
    "write_camera_file",
]

BEHIND_EPS = 1e-6

# Depth count used to derive depth_max from (depth_min, interval) camera
# files that omit an explicit maximum.
_DEFAULT_DEPTH_STEPS = 192


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics, world-to-camera pose, usable depth range."""

    intrinsics: np.ndarray  # (3, 3), upper triangular, K[2, 2] == 1
    rotation: np.ndarray  # (3, 3), world-to-camera
    translation: np.ndarray  # (3,)
    depth_min: float
    depth_max: float

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if abs(K[2, 2]) < 1e-12:
            raise ValueError("intrinsics K[2,2] must be non-zero")
        K = K / K[2, 2]
        if np.max(np.abs([K[1, 0], K[2, 0], K[2, 1]])) > 1e-9:
            raise ValueError("intrinsics must be upper triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-5:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-5:
            raise ValueError("rotation determinant must be +1")
        if not (0.0 < self.depth_min < self.depth_max):
            raise ValueError(
                f"invalid depth range [{self.depth_min}, {self.depth_max}]"
            )
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class RelativePose:
    """Transform taking reference-camera coordinates to source-camera ones."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def inverse(self) -> "RelativePose":
        r = self.rotation.T
        return RelativePose(r, -r @ self.translation)


def relative_pose(ref: CameraModel, src: CameraModel) -> RelativePose:
    """Pose of the source camera relative to the reference camera."""
    r = src.rotation @ ref.rotation.T
    t = src.translation - r @ ref.translation
    return RelativePose(r, t)


def camera_for_stage(cam: CameraModel, stage: int) -> CameraModel:
    """Intrinsics rescaled to the stage-k grid (resolution divided by 2^k).

    Uses the half-pixel-aligned mapping x_k = (x + 0.5) / 2^k - 0.5, matching
    the 2x2 mean-pooling pyramid and the x2 upsampling convention.
    """
    if stage == 0:
        return cam
    s = float(2**stage)
    K = cam.intrinsics.copy()
    K[0, 0] /= s
    K[1, 1] /= s
    K[0, 1] /= s
    K[0, 2] = (K[0, 2] + 0.5) / s - 0.5
    K[1, 2] = (K[1, 2] + 0.5) / s - 0.5
    return CameraModel(K, cam.rotation, cam.translation, cam.depth_min, cam.depth_max)


def warp_points(
    xs: np.ndarray,
    ys: np.ndarray,
    depths: np.ndarray,
    ref_cam: CameraModel,
    rel: RelativePose,
    src_intrinsics: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reproject reference pixels at given depths into a source view.

    All arrays broadcast together.  Returns ``(xw, yw, z_src, valid)`` where
    ``valid`` is False for points at or behind the source camera plane; such
    points get placeholder coordinates.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    d = np.asarray(depths, dtype=np.float64)

    Kinv = np.linalg.inv(ref_cam.intrinsics)
    # K is upper triangular with unit bottom row, hence so is its inverse.
    rx = Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2]
    ry = Kinv[1, 1] * ys + Kinv[1, 2]

    X = rx * d
    Y = ry * d
    R = rel.rotation
    t = rel.translation
    Xs = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * d + t[0]
    Ys = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * d + t[1]
    Zs = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * d + t[2]

    K = np.asarray(src_intrinsics, dtype=np.float64)
    u = K[0, 0] * Xs + K[0, 1] * Ys + K[0, 2] * Zs
    v = K[1, 1] * Ys + K[1, 2] * Zs

    valid = Zs > BEHIND_EPS
    denom = np.where(valid, Zs, 1.0)
    return u / denom, v / denom, Zs, valid


def warp_pixel(
    p,
    depth: float,
    ref_cam: CameraModel,
    rel: RelativePose,
    src_intrinsics: np.ndarray,
) -> tuple[np.ndarray, float, bool]:
    """Warp a single homogeneous pixel; returns ((x, y), z_src, valid)."""
    p = np.asarray(p, dtype=np.float64)
    x, y = p[0] / p[2], p[1] / p[2]
    xw, yw, z, valid = warp_points(x, y, depth, ref_cam, rel, src_intrinsics)
    return np.array([float(xw), float(yw)]), float(z), bool(valid)


def warp_feature_map(
    src_features: np.ndarray,
    depth_hypotheses: np.ndarray,
    ref_cam: CameraModel,
    rel: RelativePose,
    src_intrinsics: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp a source feature map onto the reference view per depth hypothesis.

    Args:
        src_features: (H, W, C) source-view features.
        depth_hypotheses: (H, W, D) per-pixel depth candidates in the
            reference view (same spatial size as the features).

    Returns:
        (warped, mask): warped is (H, W, D, C) with zeros where invalid;
        mask is (H, W, D), False where the warp lands behind the source
        camera or outside the feature grid.
    """
    from .grid import bilinear_sample_many

    h, w, d = depth_hypotheses.shape
    if src_features.shape[:2] != (h, w):
        raise ValueError(
            f"feature map {src_features.shape[:2]} does not match "
            f"hypothesis volume {(h, w)}"
        )
    xs = np.arange(w, dtype=np.float64)[None, :, None]
    ys = np.arange(h, dtype=np.float64)[:, None, None]
    u, v, _, ok = warp_points(xs, ys, depth_hypotheses, ref_cam, rel, src_intrinsics)
    values, inside = bilinear_sample_many(src_features, u, v)
    mask = ok & inside
    if src_features.ndim == 2:
        values = np.where(mask, values, np.float32(0.0))
    else:
        values = np.where(mask[..., None], values, np.float32(0.0))
    return values, mask


def back_project(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Lift a (H, W) depth map to world-space points of shape (H, W, 3)."""
    h, w = depth.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    d = np.asarray(depth, dtype=np.float64)
    Kinv = np.linalg.inv(cam.intrinsics)
    X = (Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2]) * d
    Y = (Kinv[1, 1] * ys + Kinv[1, 2]) * d
    pts_cam = np.stack([X, Y, d], axis=-1)
    return (pts_cam - cam.translation) @ cam.rotation  # == R.T @ (p - t)


def project_points(points: np.ndarray, cam: CameraModel):
    """Project world points (..., 3) to pixels; returns (x, y, z_cam)."""
    pts = np.asarray(points, dtype=np.float64)
    cam_pts = pts @ cam.rotation.T + cam.translation
    K = cam.intrinsics
    z = cam_pts[..., 2]
    safe = np.where(np.abs(z) > BEHIND_EPS, z, 1.0)
    x = (K[0, 0] * cam_pts[..., 0] + K[0, 1] * cam_pts[..., 1] + K[0, 2] * z) / safe
    y = (K[1, 1] * cam_pts[..., 1] + K[1, 2] * z) / safe
    return x, y, z


class CameraFileError(ValueError):
    """Raised for camera files that cannot be parsed."""


def read_camera_file(path) -> CameraModel:
    """Parse a camera text file.

    Layout: a line ``extrinsic`` followed by a 4x4 row-major world-to-camera
    matrix, a line ``intrinsic`` followed by a 3x3 row-major matrix, then a
    final numeric line ``depth_min depth_interval [depth_max]``.  A fourth
    value, when present, is read as depth_max instead (files that store
    ``min interval steps max``).  Without an explicit maximum, depth_max is
    ``depth_min + 192 * depth_interval``.
    """
    try:
        with open(path, "r", encoding="ascii") as f:
            raw_lines = [ln.strip() for ln in f]
    except OSError as exc:
        raise CameraFileError(f"{path}: {exc}") from exc
    lines = [ln for ln in raw_lines if ln and not ln.startswith("#")]

    def floats(line: str, label: str) -> list[float]:
        try:
            return [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise CameraFileError(f"{path}: bad {label} line {line!r}") from exc

    try:
        ei = next(i for i, ln in enumerate(lines) if ln.lower() == "extrinsic")
        ki = next(i for i, ln in enumerate(lines) if ln.lower() == "intrinsic")
    except StopIteration as exc:
        raise CameraFileError(f"{path}: missing extrinsic/intrinsic section") from exc
    if ei + 4 >= len(lines) or ki + 3 >= len(lines):
        raise CameraFileError(f"{path}: truncated matrix section")

    extr = np.array([floats(lines[ei + 1 + r], "extrinsic") for r in range(4)])
    intr = np.array([floats(lines[ki + 1 + r], "intrinsic") for r in range(3)])
    if extr.shape != (4, 4) or intr.shape != (3, 3):
        raise CameraFileError(f"{path}: matrix rows have wrong length")

    tail = [ln for ln in lines[max(ei + 5, ki + 4) :] if ln[0] not in "ei"]
    if not tail:
        raise CameraFileError(f"{path}: missing depth range line")
    vals = floats(tail[0], "depth range")
    if len(vals) < 2:
        raise CameraFileError(f"{path}: depth range line needs at least 2 values")
    depth_min, interval = vals[0], vals[1]
    if len(vals) >= 4:
        depth_max = vals[3]
    elif len(vals) == 3:
        depth_max = vals[2]
    else:
        depth_max = depth_min + _DEFAULT_DEPTH_STEPS * interval

    try:
        return CameraModel(intr, extr[:3, :3], extr[:3, 3], depth_min, depth_max)
    except ValueError as exc:
        raise CameraFileError(f"{path}: {exc}") from exc


def write_camera_file(path, cam: CameraModel) -> None:
    """Write a camera in the text layout accepted by :func:`read_camera_file`."""
    extr = np.eye(4)
    extr[:3, :3] = cam.rotation
    extr[:3, 3] = cam.translation
    interval = (cam.depth_max - cam.depth_min) / _DEFAULT_DEPTH_STEPS
    with open(path, "w", encoding="ascii") as f:
        f.write("extrinsic\n")
        for row in extr:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        f.write("\nintrinsic\n")
        for row in cam.intrinsics:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        f.write(f"\n{cam.depth_min:.17g} {interval:.17g} {cam.depth_max:.17g}\n")
