"""On-disk dataset layout shared by the CLI commands.

A dataset directory holds ``images/<name>.png`` (or .ppm/.pgm) and
``cams/<name>_cam.txt`` with matching stems, plus an optional
``gt_depths/<name>.pfm``.  Views are ordered by sorted stem.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraFileError, CameraModel, read_camera_file, write_camera_file
from .imgio import read_image, read_pfm, write_image, write_pfm

__all__ = ["DatasetError", "Dataset", "load_dataset", "write_dataset"]

_IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class DatasetError(ValueError):
    """Missing or unparseable dataset files (message names the file)."""


@dataclass
class Dataset:
    root: Path
    names: list[str]
    images: list[np.ndarray]
    cams: list[CameraModel]
    gt_depths: list[np.ndarray] | None

    def __len__(self) -> int:
        return len(self.names)


def load_dataset(root) -> Dataset:
    root = Path(root)
    image_dir = root / "images"
    cam_dir = root / "cams"
    if not image_dir.is_dir():
        raise DatasetError(f"{image_dir}: missing images directory")
    if not cam_dir.is_dir():
        raise DatasetError(f"{cam_dir}: missing cams directory")

    image_paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not image_paths:
        raise DatasetError(f"{image_dir}: no images found")

    names, images, cams = [], [], []
    for img_path in image_paths:
        cam_path = cam_dir / f"{img_path.stem}_cam.txt"
        if not cam_path.is_file():
            raise DatasetError(f"{cam_path}: missing camera file")
        try:
            cams.append(read_camera_file(cam_path))
        except CameraFileError as exc:
            raise DatasetError(str(exc)) from exc
        images.append(read_image(img_path))
        names.append(img_path.stem)

    gt_dir = root / "gt_depths"
    gt_depths = None
    if gt_dir.is_dir():
        gt_depths = []
        for name in names:
            gt_path = gt_dir / f"{name}.pfm"
            if not gt_path.is_file():
                raise DatasetError(f"{gt_path}: missing ground-truth depth")
            gt_depths.append(read_pfm(gt_path))
    return Dataset(root=root, names=names, images=images, cams=cams, gt_depths=gt_depths)


def write_dataset(
    root,
    images: list[np.ndarray],
    cams: list[CameraModel],
    gt_depths: list[np.ndarray] | None = None,
) -> list[str]:
    """Write views in the layout :func:`load_dataset` consumes."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "cams").mkdir(exist_ok=True)
    if gt_depths is not None:
        (root / "gt_depths").mkdir(exist_ok=True)
    names = []
    for i, (image, cam) in enumerate(zip(images, cams)):
        name = f"{i:08d}"
        write_image(root / "images" / f"{name}.png", image)
        write_camera_file(root / "cams" / f"{name}_cam.txt", cam)
        if gt_depths is not None:
            write_pfm(root / "gt_depths" / f"{name}.pfm", gt_depths[i])
        names.append(name)
    return names
