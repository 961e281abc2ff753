"""Synthetic ground-truth scenes and reconstruction metrics.

Scenes are built from planes, spheres and axis-aligned boxes carrying
procedural 3-D textures (value noise, stripes, checker, flat), rendered by
per-pixel ray casting with Lambertian shading under one directional light.
Every rendered view comes with its analytic depth map (camera-frame z) and
a background mask, which makes the renderer the independent oracle for the
reconstruction pipeline.

Metrics: point-cloud accuracy (mean capped distance prediction -> truth),
completeness (truth -> prediction) and their mean, plus the cumulative
distribution of normalized inverse-depth errors between two depth maps.

Scene text format (one directive per line, ``#`` comments allowed)::

    size 640 480
    range 3.5 7.0
    seed 7
    light 0.3 -0.4 1.0
    camera pos 0 0 0 lookat 0 0 5 fov 55
    plane point 0 0 5 normal 0 0 -1 texture noise 6
    sphere center 0.5 0 4.5 radius 0.8 texture stripes 9
    box min -1.2 -0.9 4 max -0.2 0.9 4.4 texture checker 3

``texture KIND FREQ [BASE AMP]`` defaults to base 0.55, amplitude 0.4;
``texture flat VALUE`` paints a constant albedo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraModel

__all__ = [
    "Texture",
    "Plane",
    "Sphere",
    "Box",
    "SyntheticScene",
    "RenderedView",
    "look_at_camera",
    "render",
    "SceneParseError",
    "parse_scene_text",
    "load_scene",
    "CloudMetrics",
    "eval_clouds",
    "error_cdf",
    "CDF_ABSCISSAE",
]

_RAY_EPS = 1e-6
AMBIENT = 0.25

CDF_ABSCISSAE = np.round(np.arange(1, 51) * 0.01, 2)


@dataclass(frozen=True)
class Texture:
    """Procedural 3-D albedo field."""

    kind: str = "noise"  # noise | stripes | checker | flat
    freq: float = 6.0
    base: float = 0.55
    amp: float = 0.4


@dataclass(frozen=True)
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    texture: Texture = Texture()


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    texture: Texture = Texture()


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: Texture = Texture()


@dataclass
class SyntheticScene:
    primitives: list
    cameras: list[CameraModel]
    width: int
    height: int
    depth_range: tuple[float, float]
    light_dir: tuple[float, float, float] = (0.35, -0.25, 1.0)
    seed: int = 0


@dataclass
class RenderedView:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32, 0 on background
    background: np.ndarray  # (H, W) bool


def look_at_camera(
    position,
    target,
    fov_deg: float,
    width: int,
    height: int,
    depth_range: tuple[float, float],
    up=(0.0, 1.0, 0.0),
) -> CameraModel:
    """Pinhole camera at ``position`` looking at ``target``.

    ``fov_deg`` is the horizontal field of view; pixels are square and the
    principal point sits at the grid center ((W-1)/2, (H-1)/2).
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position and target coincide")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, forward)
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("camera up vector is parallel to the view direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    t = -R @ position
    fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    K = np.array(
        [[fx, 0.0, (width - 1) / 2.0], [0.0, fx, (height - 1) / 2.0], [0.0, 0.0, 1.0]]
    )
    return CameraModel(K, R, t, depth_range[0], depth_range[1])


def _hash01(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1) (splitmix-style mixing)."""
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            ^ iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
            ^ iz.astype(np.uint64) * np.uint64(0x94D049BB133111EB)
            ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0xD6E8FEB86659FD93)
        )
        h ^= h >> np.uint64(30)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(27)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(points: np.ndarray, freq: float, seed: int) -> np.ndarray:
    """Trilinear value noise in [0, 1] over a hashed integer lattice."""
    p = points * freq
    p0 = np.floor(p)
    f = p - p0
    i0 = p0.astype(np.int64)
    out = np.zeros(points.shape[:-1], dtype=np.float64)
    for cz in (0, 1):
        wz = f[..., 2] if cz else 1.0 - f[..., 2]
        for cy in (0, 1):
            wy = f[..., 1] if cy else 1.0 - f[..., 1]
            for cx in (0, 1):
                wx = f[..., 0] if cx else 1.0 - f[..., 0]
                corner = _hash01(
                    i0[..., 0] + cx, i0[..., 1] + cy, i0[..., 2] + cz, seed
                )
                out += corner * wx * wy * wz
    return out


def _albedo(points: np.ndarray, tex: Texture, seed: int) -> np.ndarray:
    if tex.kind == "flat":
        return np.full(points.shape[:-1], tex.base, dtype=np.float64)
    if tex.kind == "noise":
        # Three octaves keep texture energy alive at every pyramid level.
        pattern = (
            _value_noise(points, tex.freq, seed)
            + 0.5 * _value_noise(points, 2.0 * tex.freq, seed + 101)
            + 0.25 * _value_noise(points, 4.0 * tex.freq, seed + 211)
        ) / 1.75
    elif tex.kind == "stripes":
        u = points.sum(axis=-1) / np.sqrt(3.0)
        pattern = 0.5 + 0.5 * np.sin(2.0 * np.pi * tex.freq * u)
    elif tex.kind == "checker":
        cells = np.floor(points * tex.freq).astype(np.int64).sum(axis=-1)
        pattern = (cells % 2).astype(np.float64)
    else:
        raise ValueError(f"unknown texture kind {tex.kind!r}")
    return np.clip(tex.base + tex.amp * (pattern - 0.5) * 2.0, 0.0, 1.0)


def _intersect_plane(prim: Plane, origin, dirs):
    n = np.asarray(prim.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    denom = dirs @ n
    num = (np.asarray(prim.point) - origin) @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    s = np.where(s > _RAY_EPS, s, np.inf)
    normals = np.broadcast_to(n, dirs.shape)
    return s, normals


def _intersect_sphere(prim: Sphere, origin, dirs):
    oc = origin - np.asarray(prim.center, dtype=np.float64)
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * (dirs @ oc)
    c = oc @ oc - prim.radius**2
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    s1 = (-b - sq) / (2.0 * a)
    s2 = (-b + sq) / (2.0 * a)
    s = np.where(s1 > _RAY_EPS, s1, s2)
    s = np.where(hit & (s > _RAY_EPS), s, np.inf)
    s_safe = np.where(np.isfinite(s), s, 0.0)
    pts = origin + dirs * s_safe[..., None]
    normals = (pts - np.asarray(prim.center)) / prim.radius
    return s, normals


def _intersect_box(prim: Box, origin, dirs):
    lo = np.asarray(prim.lo, dtype=np.float64)
    hi = np.asarray(prim.hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(dirs) > 1e-15, 1.0 / dirs, np.inf * np.sign(dirs + 1e-300))
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    tmin_axis = np.minimum(t1, t2)
    tmax_axis = np.maximum(t1, t2)
    # Rays parallel to slabs outside the box never hit it.
    parallel = np.abs(dirs) <= 1e-15
    inside_slab = (origin >= lo) & (origin <= hi)
    tmin_axis = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin_axis)
    tmax_axis = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax_axis)
    tnear = tmin_axis.max(axis=-1)
    tfar = tmax_axis.min(axis=-1)
    hit = (tnear <= tfar) & (tfar > _RAY_EPS)
    s = np.where(tnear > _RAY_EPS, tnear, tfar)
    s = np.where(hit, s, np.inf)
    near_axis = np.argmax(tmin_axis, axis=-1)
    normals = np.zeros(dirs.shape, dtype=np.float64)
    rows = np.arange(normals.reshape(-1, 3).shape[0])
    flat_n = normals.reshape(-1, 3)
    flat_n[rows, near_axis.reshape(-1)] = np.where(
        dirs.reshape(-1, 3)[rows, near_axis.reshape(-1)] > 0, -1.0, 1.0
    )
    return s, flat_n.reshape(dirs.shape)


_INTERSECTORS = {Plane: _intersect_plane, Sphere: _intersect_sphere, Box: _intersect_box}


def render(scene: SyntheticScene) -> list[RenderedView]:
    """Ray-cast every camera; returns image, analytic depth, background mask.

    Depth is the camera-frame z of the nearest hit; shading is Lambertian
    under the scene's directional light with a constant ambient floor, and
    the result is fully deterministic.
    """
    if not scene.primitives:
        raise ValueError("scene has no primitives")
    light = np.asarray(scene.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    views = []
    for cam in scene.cameras:
        h, w = scene.height, scene.width
        xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        Kinv = np.linalg.inv(cam.intrinsics)
        rays_cam = np.stack(
            [
                Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2],
                Kinv[1, 1] * ys + Kinv[1, 2],
                np.ones_like(xs),
            ],
            axis=-1,
        )
        dirs = rays_cam @ cam.rotation  # R.T applied row-wise
        origin = cam.center

        depth = np.full((h, w), np.inf)
        normal = np.zeros((h, w, 3))
        prim_idx = np.full((h, w), -1, dtype=np.int32)
        for idx, prim in enumerate(scene.primitives):
            s, n = _INTERSECTORS[type(prim)](prim, origin, dirs)
            closer = s < depth
            depth = np.where(closer, s, depth)
            normal = np.where(closer[..., None], n, normal)
            prim_idx = np.where(closer, idx, prim_idx)

        background = ~np.isfinite(depth)
        depth = np.where(background, 0.0, depth)
        points = origin + dirs * depth[..., None]

        albedo = np.zeros((h, w))
        for idx, prim in enumerate(scene.primitives):
            sel = prim_idx == idx
            if sel.any():
                albedo[sel] = _albedo(points[sel], prim.texture, scene.seed + idx)

        # Orient normals toward the viewer before shading.
        facing = np.sum(normal * dirs, axis=-1) > 0
        normal = np.where(facing[..., None], -normal, normal)
        lambert = np.clip(-(normal @ light), 0.0, 1.0)
        image = albedo * (AMBIENT + (1.0 - AMBIENT) * lambert)
        image = np.where(background, 0.0, image)
        views.append(
            RenderedView(
                image=image.astype(np.float32),
                depth=depth.astype(np.float32),
                background=background,
            )
        )
    return views


class SceneParseError(ValueError):
    """Scene file syntax error, annotated with the line number."""


def parse_scene_text(text: str) -> SyntheticScene:
    """Parse the scene description format (see module docstring)."""
    width = height = None
    depth_range = None
    seed = 0
    light = (0.35, -0.25, 1.0)
    camera_specs: list[tuple] = []
    primitives: list = []

    def err(lineno: int, message: str) -> SceneParseError:
        return SceneParseError(f"line {lineno}: {message}")

    def take_floats(tokens: list[str], key: str, count: int, lineno: int) -> list[float]:
        try:
            pos = tokens.index(key)
        except ValueError:
            raise err(lineno, f"missing '{key}'") from None
        vals = tokens[pos + 1 : pos + 1 + count]
        if len(vals) < count:
            raise err(lineno, f"'{key}' needs {count} numbers")
        try:
            return [float(v) for v in vals]
        except ValueError:
            raise err(lineno, f"'{key}' needs {count} numbers") from None

    def take_texture(tokens: list[str], lineno: int) -> Texture:
        if "texture" not in tokens:
            return Texture()
        pos = tokens.index("texture")
        rest = tokens[pos + 1 :]
        if not rest:
            raise err(lineno, "'texture' needs a kind")
        kind = rest[0]
        nums = []
        for tok in rest[1:]:
            try:
                nums.append(float(tok))
            except ValueError:
                break
        if kind == "flat":
            return Texture(kind="flat", base=nums[0] if nums else 0.55)
        if kind not in ("noise", "stripes", "checker"):
            raise err(lineno, f"unknown texture kind {kind!r}")
        freq = nums[0] if nums else 6.0
        base = nums[1] if len(nums) > 1 else 0.55
        amp = nums[2] if len(nums) > 2 else 0.4
        return Texture(kind=kind, freq=freq, base=base, amp=amp)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "size":
            if len(tokens) != 3:
                raise err(lineno, "size needs width and height")
            try:
                width, height = int(tokens[1]), int(tokens[2])
            except ValueError:
                raise err(lineno, "size needs integer width and height") from None
        elif head == "range":
            vals = take_floats(tokens, "range", 2, lineno)
            if not (0 < vals[0] < vals[1]):
                raise err(lineno, "range needs 0 < min < max")
            depth_range = (vals[0], vals[1])
        elif head == "seed":
            try:
                seed = int(tokens[1])
            except (IndexError, ValueError):
                raise err(lineno, "seed needs an integer") from None
        elif head == "light":
            light = tuple(take_floats(tokens, "light", 3, lineno))
        elif head == "camera":
            pos = take_floats(tokens, "pos", 3, lineno)
            target = take_floats(tokens, "lookat", 3, lineno)
            fov = take_floats(tokens, "fov", 1, lineno)[0]
            camera_specs.append((pos, target, fov, lineno))
        elif head == "plane":
            point = take_floats(tokens, "point", 3, lineno)
            normal = take_floats(tokens, "normal", 3, lineno)
            primitives.append(
                Plane(tuple(point), tuple(normal), take_texture(tokens, lineno))
            )
        elif head == "sphere":
            center = take_floats(tokens, "center", 3, lineno)
            radius = take_floats(tokens, "radius", 1, lineno)[0]
            if radius <= 0:
                raise err(lineno, "sphere radius must be positive")
            primitives.append(Sphere(tuple(center), radius, take_texture(tokens, lineno)))
        elif head == "box":
            lo = take_floats(tokens, "min", 3, lineno)
            hi = take_floats(tokens, "max", 3, lineno)
            if not all(a < b for a, b in zip(lo, hi)):
                raise err(lineno, "box min must be strictly below max per axis")
            primitives.append(Box(tuple(lo), tuple(hi), take_texture(tokens, lineno)))
        else:
            raise err(lineno, f"unknown directive {head!r}")

    if width is None or height is None:
        raise SceneParseError("missing 'size' directive")
    if depth_range is None:
        raise SceneParseError("missing 'range' directive")
    if not camera_specs:
        raise SceneParseError("scene needs at least one camera")
    if not primitives:
        raise SceneParseError("scene needs at least one primitive")

    cameras = []
    for pos, target, fov, lineno in camera_specs:
        try:
            cameras.append(look_at_camera(pos, target, fov, width, height, depth_range))
        except ValueError as exc:
            raise err(lineno, str(exc)) from None
    return SyntheticScene(
        primitives=primitives,
        cameras=cameras,
        width=width,
        height=height,
        depth_range=depth_range,
        light_dir=light,
        seed=seed,
    )


def load_scene(path) -> SyntheticScene:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scene_text(f.read())


@dataclass(frozen=True)
class CloudMetrics:
    """Mean capped nearest-neighbor distances between two clouds."""

    accuracy: float  # prediction -> ground truth
    completeness: float  # ground truth -> prediction
    overall: float
    distance_cap: float


def eval_clouds(
    pred_points: np.ndarray, gt_points: np.ndarray, distance_cap: float | None = None
) -> CloudMetrics:
    """DTU-style cloud comparison via KD-tree nearest neighbors.

    The per-point distance is capped (default: 20x the ground-truth cloud's
    median nearest-neighbor spacing) so stray outliers cannot dominate.
    """
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("cannot compare empty point clouds")
    gt_tree = cKDTree(gt)
    if distance_cap is None:
        if len(gt) >= 2:
            spacing = gt_tree.query(gt, k=2)[0][:, 1]
            distance_cap = 20.0 * float(np.median(spacing))
        else:
            distance_cap = np.inf
    d_pred = np.minimum(gt_tree.query(pred)[0], distance_cap)
    d_gt = np.minimum(cKDTree(pred).query(gt)[0], distance_cap)
    accuracy = float(d_pred.mean())
    completeness = float(d_gt.mean())
    return CloudMetrics(
        accuracy=accuracy,
        completeness=completeness,
        overall=0.5 * (accuracy + completeness),
        distance_cap=float(distance_cap),
    )


def error_cdf(
    pred_depth: np.ndarray,
    gt_depth: np.ndarray,
    depth_range: tuple[float, float],
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative distribution of normalized absolute inverse-depth errors.

    Errors are |1/pred - 1/gt| divided by the inverse-range length, sampled
    at the fixed abscissae 0.01 .. 0.50.  Pixels outside ``mask`` (default:
    gt > 0) are ignored; non-positive predictions count as infinite error.
    """
    if pred_depth.shape != gt_depth.shape:
        raise ValueError("depth maps must share a shape")
    valid = (gt_depth > 0) if mask is None else (mask & (gt_depth > 0))
    length = 1.0 / depth_range[0] - 1.0 / depth_range[1]
    pred = pred_depth[valid].astype(np.float64)
    gt = gt_depth[valid].astype(np.float64)
    err = np.where(pred > 0, np.abs(1.0 / np.maximum(pred, 1e-30) - 1.0 / gt), np.inf)
    err = err / length
    cdf = np.array([(err <= t).mean() if err.size else 0.0 for t in CDF_ABSCISSAE])
    return CDF_ABSCISSAE.copy(), cdf
