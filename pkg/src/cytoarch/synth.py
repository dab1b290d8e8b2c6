"""Synthetic section generator: anti-aliased elliptical cells on a noisy background.

Desk-scale stand-in for stained brain sections. Output is deterministic given
the config seed, and the exact ellipse parameters plus region polygons are
returned as ground truth.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .config import SynthConfig
from .geometry import as_polygon, points_in_polygon, polygon_area
from .imaging import SectionImage

SUPERSAMPLE = 4  # subpixel grid per axis for ellipse coverage


@dataclass
class GroundTruthCell:
    center: tuple          # (row, col)
    semi_major: float
    semi_minor: float
    angle_deg: float       # ccw from +x with y up, in (-90, 90]
    intensity: float
    population: int

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor


@dataclass
class SynthGroundTruth:
    cells: List[GroundTruthCell]
    regions: dict          # population index -> polygon (x, y) array or None
    structures: dict       # structure name -> polygon (x, y) array


def _normalize_angle(deg: float) -> float:
    deg = (deg + 90.0) % 180.0 - 90.0
    if deg == -90.0:
        deg = 90.0
    return deg


def _sample_orientation(rng, mean_deg: float, kappa: float) -> float:
    # axial data: von Mises on doubled angles, fall back to uniform when kappa <= 0
    if kappa <= 0:
        return _normalize_angle(rng.uniform(-90.0, 90.0))
    doubled = rng.vonmises(math.radians(2.0 * mean_deg), kappa)
    return _normalize_angle(math.degrees(doubled) / 2.0)


def _sample_center(rng, poly: Optional[np.ndarray], height: int, width: int):
    if poly is None:
        return rng.uniform(0, height), rng.uniform(0, width)
    xmin, ymin = poly.min(axis=0)
    xmax, ymax = poly.max(axis=0)
    for _ in range(10000):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        if points_in_polygon(np.array([[x, y]]), poly)[0]:
            return y, x
    raise ValueError("failed to sample a point inside the population polygon")


def ellipse_coverage(height, width, center_rc, a, b, angle_deg):
    """Per-pixel coverage fraction of one ellipse, supersampled anti-aliasing.

    Returns (r0, c0, coverage) where coverage covers the ellipse bounding box.
    """
    r_cen, c_cen = center_rc
    theta = math.radians(angle_deg)
    radius = max(a, b) + 1.0
    r0 = max(0, int(math.floor(r_cen - radius)))
    r1 = min(height - 1, int(math.ceil(r_cen + radius)))
    c0 = max(0, int(math.floor(c_cen - radius)))
    c1 = min(width - 1, int(math.ceil(c_cen + radius)))
    if r0 > r1 or c0 > c1:
        return r0, c0, np.zeros((0, 0))
    # subpixel sample offsets centered on the pixel
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    rows = np.arange(r0, r1 + 1)[:, None] + sub[None, :]
    cols = np.arange(c0, c1 + 1)[:, None] + sub[None, :]
    # visual frame: x = col, y = -row; major axis direction (cos, sin)
    dx = cols.reshape(1, -1) - c_cen      # (1, nc*S)
    dy = -(rows.reshape(-1, 1) - r_cen)   # (nr*S, 1)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    p = (dx * cos_t + dy * sin_t) / a
    q = (-dx * sin_t + dy * cos_t) / b
    inside = (p * p + q * q) <= 1.0       # (nr*S, nc*S)
    nr, nc = r1 - r0 + 1, c1 - c0 + 1
    coverage = inside.reshape(nr, SUPERSAMPLE, nc, SUPERSAMPLE).mean(axis=(1, 3))
    return r0, c0, coverage


def generate_synthetic_section(config: SynthConfig, section_id: str = "synth-000"):
    """Render one synthetic section. Returns (SectionImage, SynthGroundTruth)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    canvas = np.full((config.height, config.width), float(config.background_level))
    if config.noise_std > 0:
        canvas += rng.normal(0.0, config.noise_std, size=canvas.shape)

    cells: List[GroundTruthCell] = []
    regions = {}
    structures = {}
    for pop_idx, pop in enumerate(config.populations):
        poly = None
        if pop.polygon is not None:
            poly = as_polygon(pop.polygon)
            if polygon_area(poly) <= 0.0:
                raise ValueError(f"population {pop_idx} polygon has zero area")
        regions[pop_idx] = poly
        if pop.structure is not None:
            if poly is None:
                raise ValueError(f"structure population {pop_idx} needs a polygon")
            structures[pop.structure] = poly
        for _ in range(pop.count):
            r_cen, c_cen = _sample_center(rng, poly, config.height, config.width)
            a = max(1.0, rng.normal(pop.mean_size, pop.size_spread))
            b = max(0.8, a * math.sqrt(max(0.0, 1.0 - pop.eccentricity ** 2)))
            angle = _sample_orientation(rng, pop.orientation_mean_deg, pop.orientation_kappa)
            intensity = float(np.clip(rng.normal(pop.intensity_mean, pop.intensity_spread), 1.0, 254.0))
            cells.append(GroundTruthCell((r_cen, c_cen), a, b, angle, intensity, pop_idx))

    # draw in population order: later populations paint over earlier ones
    for cell in cells:
        r0, c0, cov = ellipse_coverage(
            config.height, config.width, cell.center, cell.semi_major, cell.semi_minor, cell.angle_deg
        )
        if cov.size == 0:
            continue
        window = canvas[r0:r0 + cov.shape[0], c0:c0 + cov.shape[1]]
        window[:] = cov * cell.intensity + (1.0 - cov) * window

    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    image = SectionImage(pixels=pixels, section_id=section_id, resolution_um=config.resolution_um)
    return image, SynthGroundTruth(cells=cells, regions=regions, structures=structures)


def ground_truth_cell_mask(cell: GroundTruthCell, height: int, width: int) -> np.ndarray:
    """Boolean pixel support of a ground-truth ellipse (coverage >= 0.5)."""
    r0, c0, cov = ellipse_coverage(height, width, cell.center, cell.semi_major, cell.semi_minor, cell.angle_deg)
    mask = np.zeros((height, width), dtype=bool)
    if cov.size:
        mask[r0:r0 + cov.shape[0], c0:c0 + cov.shape[1]] = cov >= 0.5
    return mask


def _poly_list(poly):
    return None if poly is None else np.asarray(poly, dtype=float).tolist()


def ground_truth_json(truth: SynthGroundTruth) -> str:
    payload = {
        "cells": [
            {
                "center": [float(c.center[0]), float(c.center[1])],
                "semi_major": c.semi_major,
                "semi_minor": c.semi_minor,
                "angle_deg": c.angle_deg,
                "intensity": c.intensity,
                "population": c.population,
            }
            for c in truth.cells
        ],
        "regions": {str(k): _poly_list(v) for k, v in truth.regions.items()},
        "structures": {k: _poly_list(v) for k, v in truth.structures.items()},
    }
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def ground_truth_from_json(text: str) -> SynthGroundTruth:
    data = json.loads(text)
    cells = [
        GroundTruthCell(
            center=(c["center"][0], c["center"][1]),
            semi_major=c["semi_major"],
            semi_minor=c["semi_minor"],
            angle_deg=c["angle_deg"],
            intensity=c["intensity"],
            population=c["population"],
        )
        for c in data["cells"]
    ]
    regions = {
        int(k): (None if v is None else as_polygon(v)) for k, v in data["regions"].items()
    }
    structures = {k: as_polygon(v) for k, v in data["structures"].items()}
    return SynthGroundTruth(cells=cells, regions=regions, structures=structures)
