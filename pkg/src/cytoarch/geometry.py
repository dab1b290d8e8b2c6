"""Polygon helpers shared by the synthetic generator, region features and tiling.

Polygons are float arrays of shape (n, 2) with columns (x, y) where x is the
image column and y the image row, matching the on-disk annotation format.
Pixel (r, c) is identified with the point (x=c, y=r).
"""
from __future__ import annotations

import numpy as np


def as_polygon(points) -> np.ndarray:
    poly = np.asarray(points, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise ValueError("polygon must be an (n>=3, 2) array of (x, y) points")
    return poly


def polygon_area(poly) -> float:
    """Unsigned shoelace area."""
    poly = as_polygon(poly)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(abs(np.sum(x * yn - xn * y)) / 2.0)


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd rule membership test for an array of (x, y) points.

    Vectorized ray casting along +x. Points exactly on an edge follow the
    half-open crossing convention, which keeps the test deterministic.
    """
    poly = as_polygon(poly)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ex1, ey1, ex2, ey2 in zip(x1, y1, x2, y2):
        if ey1 == ey2:
            continue
        crosses = (ey1 <= py) != (ey2 <= py)
        with np.errstate(invalid="ignore"):
            xi = ex1 + (py - ey1) * (ex2 - ex1) / (ey2 - ey1)
        inside ^= crosses & (px < xi)
    return inside


def polygon_mask(poly, height: int, width: int) -> np.ndarray:
    """Rasterize a polygon: pixel (r, c) is set iff its center (x=c, y=r) is inside."""
    poly = as_polygon(poly)
    cmin = max(0, int(np.floor(poly[:, 0].min())))
    cmax = min(width - 1, int(np.ceil(poly[:, 0].max())))
    rmin = max(0, int(np.floor(poly[:, 1].min())))
    rmax = min(height - 1, int(np.ceil(poly[:, 1].max())))
    mask = np.zeros((height, width), dtype=bool)
    if cmin > cmax or rmin > rmax:
        return mask
    cc, rr = np.meshgrid(np.arange(cmin, cmax + 1), np.arange(rmin, rmax + 1))
    pts = np.column_stack([cc.ravel(), rr.ravel()]).astype(np.float64)
    mask[rmin:rmax + 1, cmin:cmax + 1] = points_in_polygon(pts, poly).reshape(rr.shape)
    return mask


def rectangle_polygon(row: float, col: float, height: float, width: float) -> np.ndarray:
    """Axis-aligned rectangle as a polygon, (x, y) vertex order."""
    return np.array(
        [
            [col, row],
            [col + width, row],
            [col + width, row + height],
            [col, row + height],
        ],
        dtype=np.float64,
    )
