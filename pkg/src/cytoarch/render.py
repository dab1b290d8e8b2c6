"""Deterministic PNG rendering of maps, overlays, and curves.

Everything is drawn with Pillow onto fixed-size canvases from explicit
numbers, so a rerun produces byte-identical files.
"""
from __future__ import annotations

import io
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .manifest import atomic_write_bytes

CELL_TINT = (139, 0, 0)  # dark red


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_grayscale_png(values: np.ndarray, path: str) -> None:
    """Render floats in [0, 1] (or uint8 passed through) as a grayscale PNG."""
    values = np.asarray(values)
    if values.dtype != np.uint8:
        values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
        values = np.round(values * 255.0).astype(np.uint8)
    atomic_write_bytes(path, _png_bytes(Image.fromarray(values, mode="L")))


def save_rgb_png(pixels: np.ndarray, path: str) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    atomic_write_bytes(path, _png_bytes(Image.fromarray(pixels, mode="RGB")))


def tint_overlay(
    image: np.ndarray,
    mask: np.ndarray,
    color: Tuple[int, int, int] = CELL_TINT,
    alpha: float = 0.65,
) -> np.ndarray:
    """Alpha-blend `color` over the grayscale image wherever mask is true."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    base = np.asarray(image, dtype=np.float64)
    rgb = np.repeat(base[:, :, None], 3, axis=2)
    tint = np.array(color, dtype=np.float64)
    rgb[mask] = (1.0 - alpha) * rgb[mask] + alpha * tint[None, :]
    return np.round(rgb).astype(np.uint8)


def curve_png(
    series: Sequence[Tuple[np.ndarray, np.ndarray]],
    path: str,
    size: int = 512,
    margin: int = 48,
    diagonal: bool = True,
    colors: Optional[Sequence[Tuple[int, int, int]]] = None,
) -> None:
    """Plot one or more (x, y) series with x, y in [0, 1] on a square canvas.

    Used for ROC curves and CDF comparisons; axes run margin..size-margin
    with y increasing upward.
    """
    img = Image.new("RGB", (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    lo, hi = margin, size - margin
    span = hi - lo

    def to_px(x: float, y: float) -> Tuple[int, int]:
        return lo + int(round(x * span)), hi - int(round(y * span))

    draw.rectangle([lo, lo, hi, hi], outline=(0, 0, 0))
    for frac in (0.25, 0.5, 0.75):
        x0, y0 = to_px(frac, 0.0)
        draw.line([x0, hi, x0, hi - 4], fill=(0, 0, 0))
        draw.line([lo, to_px(0.0, frac)[1], lo + 4, to_px(0.0, frac)[1]], fill=(0, 0, 0))
    if diagonal:
        draw.line([to_px(0.0, 0.0), to_px(1.0, 1.0)], fill=(200, 200, 200))
    palette = list(colors) if colors else [(178, 34, 34), (30, 60, 160), (20, 120, 60), (120, 60, 150)]
    for i, (xs, ys) in enumerate(series):
        pts = [to_px(float(x), float(y)) for x, y in zip(xs, ys)]
        if len(pts) >= 2:
            draw.line(pts, fill=palette[i % len(palette)], width=2)
    atomic_write_bytes(path, _png_bytes(img))
