"""Queryable store of per-cell feature vectors.

One row per cell: id, section, centroid, area, and the 20 aligned features.
Spatial queries (rectangles and polygons) back the regional statistics, so
centroids are bucketed on a coarse grid; a query touches only the buckets its
shape overlaps. Feature data lives in one columnar array to keep region
feature extraction a pure slicing operation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import binio
from .features import FEATURE_NAMES, N_FEATURES
from .geometry import as_polygon, points_in_polygon

BUCKET_SIZE = 256.0


@dataclass
class CellFeatureDB:
    """Columnar cell table with a grid-bucket index over centroids.

    cell_ids: length-n list of unique ids.
    sections: length-n list of section ids.
    centroids: (n, 2) float64 (row, col).
    areas: (n,) float64 pixel counts.
    features: (n, 20) float64, aligned feature vectors.
    resolution_um: microns per pixel, carried for density computations.
    """

    cell_ids: List[str]
    sections: List[str]
    centroids: np.ndarray
    areas: np.ndarray
    features: np.ndarray
    resolution_um: Optional[float] = None
    meta: Optional[Dict] = None
    _buckets: Dict[Tuple[str, int, int], np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)
        self.areas = np.asarray(self.areas, dtype=np.float64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.cell_ids)
        if self.features.shape != (n, N_FEATURES):
            raise ValueError(f"features must be ({n}, {N_FEATURES}), got {self.features.shape}")
        if len(self.sections) != n or len(self.centroids) != n or len(self.areas) != n:
            raise ValueError("column lengths disagree")
        if len(set(self.cell_ids)) != n:
            seen = set()
            dup = next(c for c in self.cell_ids if c in seen or seen.add(c))
            raise ValueError(f"duplicate cell_id {dup!r}")
        self._buckets = {}
        keys_r = np.floor(self.centroids[:, 0] / BUCKET_SIZE).astype(int)
        keys_c = np.floor(self.centroids[:, 1] / BUCKET_SIZE).astype(int)
        grouped: Dict[Tuple[str, int, int], List[int]] = {}
        for i, (sec, kr, kc) in enumerate(zip(self.sections, keys_r, keys_c)):
            grouped.setdefault((sec, kr, kc), []).append(i)
        self._buckets = {k: np.array(v, dtype=np.int64) for k, v in grouped.items()}

    def __len__(self) -> int:
        return len(self.cell_ids)

    def _candidates(self, section_id: str, row_lo: float, row_hi: float, col_lo: float, col_hi: float) -> np.ndarray:
        if row_hi <= row_lo or col_hi <= col_lo:
            return np.zeros(0, dtype=np.int64)
        kr0 = int(np.floor(row_lo / BUCKET_SIZE))
        kr1 = int(np.floor(np.nextafter(row_hi, -np.inf) / BUCKET_SIZE))
        kc0 = int(np.floor(col_lo / BUCKET_SIZE))
        kc1 = int(np.floor(np.nextafter(col_hi, -np.inf) / BUCKET_SIZE))
        hits = []
        for kr in range(kr0, kr1 + 1):
            for kc in range(kc0, kc1 + 1):
                bucket = self._buckets.get((section_id, kr, kc))
                if bucket is not None:
                    hits.append(bucket)
        if not hits:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(hits))

    def query_rect(self, section_id: str, row_lo: float, row_hi: float, col_lo: float, col_hi: float) -> np.ndarray:
        """Indices of cells with centroid in [row_lo, row_hi) x [col_lo, col_hi)."""
        cand = self._candidates(section_id, row_lo, row_hi, col_lo, col_hi)
        if len(cand) == 0:
            return cand
        cen = self.centroids[cand]
        inside = (
            (cen[:, 0] >= row_lo)
            & (cen[:, 0] < row_hi)
            & (cen[:, 1] >= col_lo)
            & (cen[:, 1] < col_hi)
        )
        return cand[inside]

    def query_polygon(self, section_id: str, polygon: np.ndarray) -> np.ndarray:
        """Indices of cells whose centroid lies inside the polygon.

        Polygon vertices are (x, y) = (col, row), matching the annotation
        format; centroids are converted accordingly.
        """
        polygon = as_polygon(polygon)
        col_lo, col_hi = polygon[:, 0].min(), polygon[:, 0].max()
        row_lo, row_hi = polygon[:, 1].min(), polygon[:, 1].max()
        cand = self._candidates(
            section_id, row_lo, np.nextafter(row_hi, np.inf), col_lo, np.nextafter(col_hi, np.inf)
        )
        if len(cand) == 0:
            return cand
        xy = self.centroids[cand][:, ::-1]
        return cand[points_in_polygon(xy, polygon)]

    def section_indices(self, section_id: str) -> np.ndarray:
        idx = [i for i, s in enumerate(self.sections) if s == section_id]
        return np.array(idx, dtype=np.int64)


def build_cell_db(
    cell_ids: Sequence[str],
    sections: Sequence[str],
    centroids: np.ndarray,
    areas: np.ndarray,
    features: np.ndarray,
    resolution_um: Optional[float] = None,
    meta: Optional[Dict] = None,
) -> CellFeatureDB:
    return CellFeatureDB(
        cell_ids=list(cell_ids),
        sections=list(sections),
        centroids=centroids,
        areas=areas,
        features=features,
        resolution_um=resolution_um,
        meta=meta,
    )


def save_db(db: CellFeatureDB, path: str) -> None:
    binio.write_arrays(
        path,
        {"centroids": db.centroids, "areas": db.areas, "features": db.features},
        kind="cell_feature_db",
        meta={
            "cell_ids": db.cell_ids,
            "sections": db.sections,
            "resolution_um": db.resolution_um,
            "feature_names": FEATURE_NAMES,
            "extra": db.meta or {},
        },
    )


def load_db(path: str) -> CellFeatureDB:
    arrays, meta = binio.read_arrays(path, expect_kind="cell_feature_db")
    return CellFeatureDB(
        cell_ids=list(meta["cell_ids"]),
        sections=list(meta["sections"]),
        centroids=arrays["centroids"],
        areas=arrays["areas"],
        features=arrays["features"],
        resolution_um=meta.get("resolution_um"),
        meta=meta.get("extra") or None,
    )


def export_csv(db: CellFeatureDB, path: str) -> None:
    """Flat CSV: one row per cell, columns id/section/centroid/area/features."""
    from .manifest import atomic_write_text
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell_id", "section_id", "centroid_row", "centroid_col", "area"] + FEATURE_NAMES)
    for i in range(len(db)):
        writer.writerow(
            [db.cell_ids[i], db.sections[i],
             repr(float(db.centroids[i, 0])), repr(float(db.centroids[i, 1])),
             repr(float(db.areas[i]))]
            + [repr(float(v)) for v in db.features[i]]
        )
    atomic_write_text(path, buf.getvalue())
