"""Shared fixtures: synthetic camera rigs and rendered scenes.

The rigs mimic a desk-scale capture: a reference camera at the origin and
four sources on a small ring, all aimed at the scene center.  Scene content
sits near the middle of the inverse depth range, away from the image
borders, so matching quality reflects the algorithm rather than frame
truncation.
"""

from __future__ import annotations

import numpy as np
import pytest

from patchmvs.geometry import CameraModel
from patchmvs.harness import (
    Box,
    Plane,
    SyntheticScene,
    Texture,
    look_at_camera,
    render,
)

DEPTH_RANGE = (3.5, 7.0)


def ring_cameras(
    width: int,
    height: int,
    baseline: float = 0.6,
    fov: float = 40.0,
    count: int = 5,
    depth_range=DEPTH_RANGE,
) -> list[CameraModel]:
    """Reference at the origin plus up to 4 ring sources, aimed at (0,0,5)."""
    b = baseline
    positions = [(0, 0, 0), (b, 0, 0), (-b, 0, 0), (0, 0.8 * b, 0), (0, -0.8 * b, 0)]
    return [
        look_at_camera(p, (0.0, 0.0, 5.0), fov, width, height, depth_range)
        for p in positions[:count]
    ]


def slab_plane_scene(width: int, height: int, seed: int = 3) -> SyntheticScene:
    """Textured fronto-parallel slab at z=5, inset from the frame borders."""
    cams = ring_cameras(width, height)
    slab = Box(
        lo=(-1.45, -1.05, 5.0), hi=(1.45, 1.05, 5.2), texture=Texture("noise", 2.5)
    )
    return SyntheticScene([slab], cams, width, height, DEPTH_RANGE, seed=seed)


def two_plane_scene(width: int, height: int, seed: int = 5) -> SyntheticScene:
    """Two fronto-parallel slabs at different depths with a shared boundary."""
    cams = ring_cameras(width, height)
    near = Box(
        lo=(-1.45, -1.05, 4.3), hi=(0.1, 1.05, 4.5), texture=Texture("noise", 2.5)
    )
    far = Box(
        lo=(-0.1, -1.05, 5.6), hi=(1.45, 1.05, 5.8), texture=Texture("stripes", 4.0)
    )
    return SyntheticScene([near, far], cams, width, height, DEPTH_RANGE, seed=seed)


def slanted_step_scene(width: int, height: int, seed: int = 9) -> SyntheticScene:
    """Slanted noise backdrop with a raised flat cross (long depth boundary).

    Flat cross interiors are textureless, so this scene exercises exactly
    the regimes that adaptive propagation and evaluation target.
    """
    cams = ring_cameras(width, height, baseline=0.8, fov=35.0)
    slant = Plane(
        point=(0, 0, 5.2),
        normal=(0.18, 0.0, -1.0),
        texture=Texture("noise", 0.9, base=0.4, amp=0.35),
    )
    arm_h = Box(lo=(-0.8, -0.22, 4.25), hi=(0.8, 0.22, 4.5), texture=Texture("flat", base=0.85))
    arm_v = Box(lo=(-0.25, -0.7, 4.25), hi=(0.25, 0.7, 4.5), texture=Texture("flat", base=0.85))
    return SyntheticScene([slant, arm_h, arm_v], cams, width, height, DEPTH_RANGE, seed=seed)


def occluder_scene(width: int, height: int, seed: int = 13) -> SyntheticScene:
    """Textured backdrop slab with a tall occluder box in front of it."""
    cams = ring_cameras(width, height, baseline=0.8, fov=35.0)
    backdrop = Box(
        lo=(-1.25, -0.95, 5.2), hi=(1.25, 0.95, 5.4), texture=Texture("noise", 2.5)
    )
    occ = Box(lo=(-0.85, -0.9, 4.1), hi=(-0.05, 0.9, 4.4), texture=Texture("noise", 4.0))
    return SyntheticScene([backdrop, occ], cams, width, height, DEPTH_RANGE, seed=seed)


@pytest.fixture(scope="session")
def plane_views_small():
    """Rendered 320x256 slab scene: (scene, views)."""
    scene = slab_plane_scene(320, 256)
    return scene, render(scene)


@pytest.fixture(scope="session")
def plane_cascade_small(plane_views_small):
    """Default-config cascade result on the small slab scene."""
    from patchmvs.pipeline import PipelineConfig, run_cascade

    scene, views = plane_views_small
    result = run_cascade(
        [v.image for v in views], scene.cameras, PipelineConfig(seed=1)
    )
    return scene, views, result


def upsample_to(depth: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Repeated x2 upsampling until the target shape is reached."""
    from patchmvs.grid import upsample_x2

    out = depth
    while out.shape != shape:
        out = upsample_x2(out)
    return out
