"""Image and depth-map file I/O: PFM float maps plus 8-bit PNG/PPM images.

PFM layout: magic ``Pf`` (1 channel) or ``PF`` (3 channels), a dimensions
line ``W H``, a scale line whose sign encodes endianness (negative =
little-endian), then ``H`` rows of float32 samples stored bottom-up.
Round-trips are bit-exact for finite float32 payloads.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = [
    "PfmError",
    "PfmHeaderError",
    "PfmPayloadError",
    "PfmChannelError",
    "read_pfm",
    "write_pfm",
    "read_image",
    "write_image",
]


class PfmError(ValueError):
    """Base class for malformed PFM files."""


class PfmHeaderError(PfmError):
    """Bad magic, missing dimensions, or an unparseable header field."""


class PfmPayloadError(PfmError):
    """Pixel payload shorter than the header promises."""


class PfmChannelError(PfmError):
    """Channel count not representable as PFM (only 1 or 3 allowed)."""


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a (H, W) or (H, W, 3) float32 array."""
    with open(path, "rb") as f:
        data = f.read()

    lines: list[bytes] = []
    pos = 0
    # Header is three whitespace-terminated records; '#' lines are comments.
    while len(lines) < 3 and pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0:
            end = len(data)
        line = data[pos:end].strip()
        pos = end + 1
        if line and not line.startswith(b"#"):
            lines.append(line)
    if len(lines) < 3:
        raise PfmHeaderError(f"{path}: incomplete PFM header")

    magic = lines[0]
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise PfmHeaderError(f"{path}: bad magic {magic!r}, expected 'Pf' or 'PF'")

    try:
        width, height = (int(tok) for tok in lines[1].split())
    except ValueError as exc:
        raise PfmHeaderError(f"{path}: bad dimensions line {lines[1]!r}") from exc
    if width <= 0 or height <= 0:
        raise PfmHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    try:
        scale = float(lines[2])
    except ValueError as exc:
        raise PfmHeaderError(f"{path}: bad scale line {lines[2]!r}") from exc

    count = width * height * channels
    dtype = "<f4" if scale < 0 else ">f4"
    payload = data[pos:]
    if len(payload) < count * 4:
        raise PfmPayloadError(
            f"{path}: truncated payload, expected {count * 4} bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload[: count * 4], dtype=dtype).astype(np.float32)
    if channels == 1:
        grid = values.reshape(height, width)
    else:
        grid = values.reshape(height, width, 3)
    return np.ascontiguousarray(grid[::-1])  # rows are stored bottom-up


def write_pfm(path, grid: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float32 grid as little-endian PFM."""
    grid = np.asarray(grid, dtype=np.float32)
    channels = 1 if grid.ndim == 2 else grid.shape[2]
    if grid.ndim not in (2, 3) or channels not in (1, 3):
        raise PfmChannelError(f"{path}: cannot encode {channels}-channel grid as PFM")
    height, width = grid.shape[:2]
    with open(path, "wb") as f:
        f.write(b"Pf\n" if channels == 1 else b"PF\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(grid[::-1]).astype("<f4").tobytes())


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM/PGM image into float32 in [0, 1].

    Grayscale files load as (H, W); everything else is converted to RGB
    (H, W, 3).
    """
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float32)
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def write_image(path, grid: np.ndarray) -> None:
    """Write a float grid in [0, 1] as an 8-bit PNG/PPM image (by extension)."""
    arr = np.clip(np.asarray(grid, dtype=np.float32), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.ndim == 2:
        Image.fromarray(data, mode="L").save(path)
    elif data.ndim == 3 and data.shape[2] == 3:
        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise ValueError(f"{path}: unsupported image shape {grid.shape}")
