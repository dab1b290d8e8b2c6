"""Cell segmentation: adaptive thresholding, connected components, patch extraction.

The thresholding rule is pinned exactly: a pixel is foreground iff it is
darker than the Gaussian-weighted mean of its block_size neighborhood by more
than |c| (c is negative), with replicated edges. Implemented directly instead
of through an imaging library so border handling and the Gaussian sigma are
bit-reproducible.
"""
from __future__ import annotations

import math
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .imaging import CellPatch, CellSegment, SectionImage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def gaussian_block_kernel(block_size: int) -> np.ndarray:
    """1-D Gaussian kernel of length block_size, sigma tied to the block size."""
    if block_size < 3 or block_size % 2 == 0:
        raise ValueError("block_size must be odd and >= 3")
    sigma = 0.3 * ((block_size - 1) * 0.5 - 1.0) + 0.8
    x = np.arange(block_size, dtype=np.float64) - (block_size - 1) / 2.0
    kernel = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def local_gaussian_mean(image: np.ndarray, block_size: int) -> np.ndarray:
    """Gaussian-weighted neighborhood mean with edge replication."""
    kernel = gaussian_block_kernel(block_size)
    smoothed = ndimage.correlate1d(image.astype(np.float64), kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(smoothed, kernel, axis=1, mode="nearest")


def adaptive_threshold(image: SectionImage, block_size: int = 101, c: float = -12.0) -> np.ndarray:
    """Binary foreground mask: dark cells on a bright background.

    Foreground iff pixel - local_mean < c (so with c = -12 a pixel must be at
    least 12 levels darker than its Gaussian neighborhood mean).
    """
    if block_size % 2 == 0:
        raise ValueError("block_size must be odd")
    mean = local_gaussian_mean(image.pixels, block_size)
    return (image.pixels.astype(np.float64) - mean) < c


def connected_components(
    mask: np.ndarray,
    min_area: int = 1,
    max_area: Optional[int] = None,
    section_id: str = "section",
) -> List[CellSegment]:
    """4-connected components of a boolean mask, filtered by area.

    Components are ordered by the (min_row, min_col) of their bounding boxes
    and numbered in that order.
    """
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    kept = []
    for label_idx, slc in enumerate(slices, start=1):
        rows, cols = np.nonzero(labels[slc] == label_idx)
        area = len(rows)
        if area < min_area or (max_area is not None and area > max_area):
            continue
        coords = np.column_stack([rows + slc[0].start, cols + slc[1].start])
        kept.append(coords)
    kept.sort(key=lambda coords: (int(coords[:, 0].min()), int(coords[:, 1].min())))
    return [
        CellSegment(cell_id=f"{section_id}:{i:06d}", section_id=section_id, pixel_coords=coords)
        for i, coords in enumerate(kept)
    ]


def orientation_from_coords(coords: np.ndarray) -> Tuple[float, float]:
    """Principal-axis angle and anisotropy confidence of a pixel coordinate set.

    Angle is measured counterclockwise from +x (columns) with y pointing up,
    in (-90, 90]. Confidence is 1 - lambda2/lambda1 of the coordinate
    covariance, 0 for isotropic sets.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) == 0:
        raise ValueError("need at least one foreground pixel")
    x = coords[:, 1] - coords[:, 1].mean()
    y = -(coords[:, 0] - coords[:, 0].mean())
    cxx = float(np.mean(x * x))
    cyy = float(np.mean(y * y))
    cxy = float(np.mean(x * y))
    trace = cxx + cyy
    root = math.hypot(cxx - cyy, 2.0 * cxy)
    lam1 = (trace + root) / 2.0
    lam2 = (trace - root) / 2.0
    if lam1 <= 0.0:
        return 0.0, 0.0
    confidence = float(np.clip(1.0 - lam2 / lam1, 0.0, 1.0))
    if confidence == 0.0:
        return 0.0, 0.0
    angle = math.degrees(0.5 * math.atan2(2.0 * cxy, cxx - cyy))
    if angle <= -90.0:
        angle += 180.0
    elif angle > 90.0:
        angle -= 180.0
    return angle, confidence


def rotate_patch(patch: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate patch content counterclockwise (visually) by angle_deg, bilinear."""
    if angle_deg == 0.0:
        return patch.copy()
    phi = math.radians(angle_deg)
    cos_p, sin_p = math.cos(phi), math.sin(phi)
    center = (patch.shape[0] - 1) / 2.0, (patch.shape[1] - 1) / 2.0
    matrix = np.array([[cos_p, sin_p], [-sin_p, cos_p]])
    offset = np.array(
        [
            center[0] * (1.0 - cos_p) - center[1] * sin_p,
            center[1] * (1.0 - cos_p) + center[0] * sin_p,
        ]
    )
    return ndimage.affine_transform(patch, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def normalize_rotation(raw_pixels: np.ndarray, coords: np.ndarray):
    """Rotate a patch so the principal axis of the cell is horizontal.

    `coords` are the cell pixel coordinates used for the orientation estimate.
    Returns (rotated_pixels, rotation_angle, rotation_confidence).
    """
    angle, confidence = orientation_from_coords(coords)
    rotated = rotate_patch(raw_pixels, -angle)
    return rotated, angle, confidence


def extract_patch(image: SectionImage, segment: CellSegment, patch_size: int = 64) -> CellPatch:
    """Zero-padded, centered, rotation-normalized patch for one cell.

    Cell pixels keep their intensity, everything else is zero; the centroid
    maps to the patch center and oversized cells are center-cropped.
    """
    if patch_size < 8:
        raise ValueError("patch_size must be >= 8")
    half = patch_size // 2
    off_r = half - int(round(segment.centroid[0]))
    off_c = half - int(round(segment.centroid[1]))
    raw = np.zeros((patch_size, patch_size), dtype=np.float64)
    mask = np.zeros((patch_size, patch_size), dtype=bool)
    rr = segment.pixel_coords[:, 0] + off_r
    cc = segment.pixel_coords[:, 1] + off_c
    keep = (rr >= 0) & (rr < patch_size) & (cc >= 0) & (cc < patch_size)
    rr, cc = rr[keep], cc[keep]
    raw[rr, cc] = image.pixels[segment.pixel_coords[keep, 0], segment.pixel_coords[keep, 1]]
    mask[rr, cc] = True
    rotated, angle, confidence = normalize_rotation(raw, segment.pixel_coords)
    return CellPatch(
        pixels=rotated,
        raw_pixels=raw,
        raw_mask=mask,
        rotation_angle=angle,
        rotation_confidence=confidence,
    )


def segment_section(image: SectionImage, block_size=101, c=-12.0, min_area=20, max_area=5000):
    """Threshold + label a section; returns the list of CellSegments."""
    mask = adaptive_threshold(image, block_size=block_size, c=c)
    return connected_components(mask, min_area=min_area, max_area=max_area, section_id=image.section_id)
