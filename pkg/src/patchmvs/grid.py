"""Dense 2D multi-channel grids with bilinear sampling and resampling.

A grid is a numpy ``float32`` array of shape ``(H, W)`` or ``(H, W, C)``,
row-major, indexed as ``grid[y, x]``.  Sampling coordinates use integer
pixel centers: ``(x, y) == (j, i)`` is the exact center of ``grid[i, j]``.
Queries outside ``[0, W-1] x [0, H-1]`` are clamped to the border and
reported invalid via a flag; no value in a grid is ever NaN.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "num_channels",
    "bilinear_sample",
    "bilinear_sample_many",
    "upsample_x2",
    "downsample_x2",
    "shift_clamped",
]


def num_channels(grid: np.ndarray) -> int:
    """Channel count of a (H, W) or (H, W, C) grid."""
    return 1 if grid.ndim == 2 else grid.shape[2]


def bilinear_sample_many(
    grid: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a grid at many continuous positions at once.

    Args:
        grid: (H, W) or (H, W, C) float array.
        xs, ys: arrays of identical shape with continuous pixel coordinates.

    Returns:
        (values, valid): ``values`` has shape ``xs.shape`` for a 2-D grid and
        ``xs.shape + (C,)`` for a 3-D grid; ``valid`` is a boolean array of
        shape ``xs.shape``, False where the query center lies outside
        ``[0, W-1] x [0, H-1]`` (those values come from clamped coordinates).
    """
    h, w = grid.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError(f"coordinate shapes differ: {xs.shape} vs {ys.shape}")

    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    xc = np.clip(xs, 0.0, float(w - 1))
    yc = np.clip(ys, 0.0, float(h - 1))

    # floor == int-cast for non-negative values; keep the top row/column of
    # the 2x2 footprint inside the grid so weights stay in [0, 1].
    x0 = xc.astype(np.intp)
    y0 = yc.astype(np.intp)
    if w >= 2:
        np.minimum(x0, w - 2, out=x0)
    if h >= 2:
        np.minimum(y0, h - 2, out=y0)
    fx = (xc - x0).astype(np.float32)
    fy = (yc - y0).astype(np.float32)

    flat = grid.reshape(h * w, -1)
    i00 = y0 * w + x0
    i01 = i00 + (1 if w >= 2 else 0)
    i10 = i00 + (w if h >= 2 else 0)
    i11 = i10 + (1 if w >= 2 else 0)

    fx = fx[..., None]
    fy = fy[..., None]
    top = flat[i00] * (1.0 - fx) + flat[i01] * fx
    bot = flat[i10] * (1.0 - fx) + flat[i11] * fx
    values = top * (1.0 - fy) + bot * fy

    if grid.ndim == 2:
        values = values[..., 0]
    return values.astype(np.float32, copy=False), valid


def bilinear_sample(grid: np.ndarray, x: float, y: float):
    """Bilinear lookup of a single position; see :func:`bilinear_sample_many`.

    Returns ``(value, valid)`` where ``value`` is a float for 2-D grids and a
    length-C vector otherwise.  Total in (x, y): out-of-grid queries return
    the clamped border blend with ``valid=False``.
    """
    values, valid = bilinear_sample_many(
        grid, np.asarray([x], dtype=np.float64), np.asarray([y], dtype=np.float64)
    )
    value = values[0]
    if grid.ndim == 2:
        value = float(value)
    return value, bool(valid[0])


def upsample_x2(grid: np.ndarray) -> np.ndarray:
    """Double a grid's resolution with bilinear interpolation.

    Output pixel ``i`` reads the source at ``(i + 0.5) / 2 - 0.5`` (half-pixel
    alignment, clamped at the borders), so a 2x1 grid [0, 2] becomes
    [0, 0.5, 1.5, 2].
    """
    h, w = grid.shape[:2]
    xs = (np.arange(2 * w, dtype=np.float64) + 0.5) / 2.0 - 0.5
    ys = (np.arange(2 * h, dtype=np.float64) + 0.5) / 2.0 - 0.5
    gx, gy = np.meshgrid(xs, ys)
    values, _ = bilinear_sample_many(grid, gx, gy)
    return values


def downsample_x2(grid: np.ndarray) -> np.ndarray:
    """Halve a grid's resolution with 2x2 mean pooling.

    Output is ceil(W/2) x ceil(H/2); odd trailing rows/columns are pooled
    with edge replication (the mean of the pixels actually present).
    """
    h, w = grid.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"grid too small to downsample: {w}x{h}")
    g = grid
    if h % 2:
        g = np.concatenate([g, g[-1:]], axis=0)
    if w % 2:
        g = np.concatenate([g, g[:, -1:]], axis=1)
    out = (
        g[0::2, 0::2].astype(np.float32)
        + g[1::2, 0::2]
        + g[0::2, 1::2]
        + g[1::2, 1::2]
    ) * np.float32(0.25)
    return out


def shift_clamped(grid: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer-shifted view with border clamping: out[y, x] = g[y+dy, x+dx]."""
    h, w = grid.shape[:2]
    iy = np.clip(np.arange(h) + dy, 0, h - 1)
    ix = np.clip(np.arange(w) + dx, 0, w - 1)
    return grid[iy][:, ix]
