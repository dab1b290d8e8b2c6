"""Per-cell shape descriptors.

Ten hand-designed properties plus ten diffusion-map coordinates make the fixed
20-entry cell feature vector. The ordering below is a frozen contract: region
feature vectors, trained detectors, and saved databases all index into it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import CellPatch, CellSegment

MANUAL_FEATURE_NAMES = [
    "width",
    "height",
    "area",
    "rotation_angle",
    "rotation_confidence",
    "intensity_mean",
    "intensity_std",
    "patch_size",
    "coord_std_horizontal",
    "coord_std_vertical",
]
N_MANUAL = len(MANUAL_FEATURE_NAMES)
N_EMBED = 10
N_FEATURES = N_MANUAL + N_EMBED

FEATURE_NAMES = MANUAL_FEATURE_NAMES + [f"dm{i}" for i in range(1, N_EMBED + 1)]

ROTATION_FAMILY = {"rotation_angle", "rotation_confidence"}


@dataclass
class ManualFeatures:
    width: float
    height: float
    area: float
    rotation_angle: float
    rotation_confidence: float
    intensity_mean: float
    intensity_std: float
    patch_size: float
    coord_std_horizontal: float
    coord_std_vertical: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.width,
                self.height,
                self.area,
                self.rotation_angle,
                self.rotation_confidence,
                self.intensity_mean,
                self.intensity_std,
                self.patch_size,
                self.coord_std_horizontal,
                self.coord_std_vertical,
            ],
            dtype=np.float64,
        )


def manual_features(segment: CellSegment, patch: CellPatch) -> ManualFeatures:
    """Compute the ten hand-designed features for one cell.

    Intensity statistics use the original (unrotated) cell pixels so they are
    unaffected by interpolation; the spatial extent features (patch_size and
    the coordinate stds) describe the rotation-normalized patch, where the
    horizontal std measures length along the principal axis.
    """
    raw_vals = patch.raw_pixels[patch.raw_mask]
    rot_rows, rot_cols = np.nonzero(patch.pixels)
    if len(rot_rows) == 0:
        coord_std_h = 0.0
        coord_std_v = 0.0
    else:
        coord_std_h = float(np.std(rot_cols))
        coord_std_v = float(np.std(rot_rows))
    return ManualFeatures(
        width=float(segment.bbox_width),
        height=float(segment.bbox_height),
        area=float(segment.area),
        rotation_angle=float(patch.rotation_angle),
        rotation_confidence=float(patch.rotation_confidence),
        intensity_mean=float(np.mean(raw_vals)) if len(raw_vals) else 0.0,
        intensity_std=float(np.std(raw_vals)) if len(raw_vals) else 0.0,
        patch_size=float(len(rot_rows)),
        coord_std_horizontal=coord_std_h,
        coord_std_vertical=coord_std_v,
    )


def cell_feature_vector(manual: ManualFeatures, embedding: np.ndarray) -> np.ndarray:
    """Concatenate manual features with the 10 embedding coordinates."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (N_EMBED,):
        raise ValueError(f"embedding must have shape ({N_EMBED},), got {embedding.shape}")
    return np.concatenate([manual.as_array(), embedding])
