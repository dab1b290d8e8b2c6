"""Core image-domain types: sections, segments, patches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


@dataclass
class SectionImage:
    """8-bit grayscale section image plus identity and physical metadata."""

    pixels: np.ndarray              # uint8, shape (height, width)
    section_id: str = "section"
    resolution_um: Optional[float] = None  # micrometers per pixel

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError("section pixels must be a 2-D array")
        if self.pixels.dtype != np.uint8:
            if self.pixels.min() < 0 or self.pixels.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            self.pixels = self.pixels.astype(np.uint8)
        if self.width == 0 or self.height == 0:
            raise ValueError("section dimensions must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class CellSegment:
    """One segmented cell: its pixel set and derived geometry."""

    cell_id: str
    section_id: str
    pixel_coords: np.ndarray        # (n, 2) int rows of (row, col)
    centroid: Tuple[float, float] = field(init=False)
    bbox: Tuple[int, int, int, int] = field(init=False)
    area: int = field(init=False)

    def __post_init__(self):
        coords = np.asarray(self.pixel_coords, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) == 0:
            raise ValueError("pixel_coords must be a non-empty (n, 2) array")
        self.pixel_coords = coords
        self.centroid = (float(coords[:, 0].mean()), float(coords[:, 1].mean()))
        self.bbox = (
            int(coords[:, 0].min()),
            int(coords[:, 1].min()),
            int(coords[:, 0].max()),
            int(coords[:, 1].max()),
        )
        self.area = int(len(coords))

    @property
    def bbox_height(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def bbox_width(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


@dataclass
class CellPatch:
    """Uniformly sized, rotation-normalized cell image.

    `pixels` holds the rotation-normalized patch; `raw_pixels` / `raw_mask`
    keep the unrotated zero-padded copy and its cell support so intensity
    statistics are not polluted by resampling.
    """

    pixels: np.ndarray              # float64, (size, size), zero outside cell support
    raw_pixels: np.ndarray          # float64, (size, size), unrotated copy
    raw_mask: np.ndarray            # bool, (size, size), cell support before rotation
    rotation_angle: float           # degrees in (-90, 90]
    rotation_confidence: float      # 1 - lambda2/lambda1, in [0, 1]

    @property
    def size(self) -> int:
        return self.pixels.shape[0]
