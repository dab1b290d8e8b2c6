"""Region-level feature vectors from cell populations.

A region is summarized by the empirical CDF of every cell feature evaluated
at 99 fixed thresholds (the percentiles of that feature over the whole
training corpus), plus cell density and the fraction of region area occupied
by cells: 20 * 99 + 2 = 1982 numbers. Tiles are square regions on a regular
grid; a tile is a positive example for a structure when more than half of it
lies inside the structure outline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import binio
from .celldb import CellFeatureDB
from .features import FEATURE_NAMES, N_FEATURES
from .geometry import as_polygon, points_in_polygon, polygon_area, rectangle_polygon
from .manifest import atomic_write_text

N_THRESHOLDS = 99
REGION_DIM = N_FEATURES * N_THRESHOLDS + 2
DENSITY_INDEX = N_FEATURES * N_THRESHOLDS
AREA_RATIO_INDEX = DENSITY_INDEX + 1
MIN_GRID_CELLS = 100


@dataclass
class ThresholdGrid:
    """(20, 99) matrix: row j holds the 1..99 percentiles of feature j."""

    thresholds: np.ndarray

    def __post_init__(self) -> None:
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if self.thresholds.shape != (N_FEATURES, N_THRESHOLDS):
            raise ValueError(f"thresholds must be ({N_FEATURES}, {N_THRESHOLDS})")


def fit_threshold_grid(features) -> ThresholdGrid:
    """Percentiles 1..99 of each feature column over the training corpus.

    Accepts a CellFeatureDB or a plain (n, 20) feature matrix.
    """
    if hasattr(features, "features"):
        features = features.features
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != N_FEATURES:
        raise ValueError(f"expected (n, {N_FEATURES}) feature matrix")
    if len(features) < MIN_GRID_CELLS:
        raise ValueError(f"need at least {MIN_GRID_CELLS} cells to fit the grid, got {len(features)}")
    qs = np.arange(1, N_THRESHOLDS + 1) / 100.0
    grid = np.quantile(features, qs, axis=0).T
    return ThresholdGrid(thresholds=grid)


def save_grid(grid: ThresholdGrid, path: str) -> None:
    payload = {
        "kind": "threshold_grid",
        "feature_names": FEATURE_NAMES,
        "thresholds": [[float(v) for v in row] for row in grid.thresholds],
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_grid(path: str) -> ThresholdGrid:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "threshold_grid":
        raise ValueError(f"{path}: not a threshold grid file")
    return ThresholdGrid(thresholds=np.array(payload["thresholds"], dtype=np.float64))


@dataclass
class RegionFeatureVector:
    """1982-entry region summary plus support bookkeeping."""

    vector: np.ndarray
    n_cells: int
    low_support: bool

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (REGION_DIM,):
            raise ValueError(f"vector must have {REGION_DIM} entries")


def region_feature(
    db: CellFeatureDB,
    grid: ThresholdGrid,
    cell_indices: np.ndarray,
    region_area_px: float,
    min_cells: int = 5,
) -> RegionFeatureVector:
    """Summarize the cells indexed by `cell_indices` over a region of the
    given pixel area.

    CDF block: entry (j, k) is the fraction of region cells whose feature j
    is <= thresholds[j, k]. Density is cells per square millimeter when the
    database carries a pixel resolution, otherwise cells per pixel. The area
    ratio is the summed cell area over the region area, clipped to [0, 1].
    Regions with fewer than min_cells cells are flagged; an empty region
    yields the all-zero vector.
    """
    if region_area_px <= 0.0:
        raise ValueError("region_area_px must be positive")
    cell_indices = np.asarray(cell_indices, dtype=np.int64)
    n = len(cell_indices)
    vector = np.zeros(REGION_DIM, dtype=np.float64)
    if n == 0:
        return RegionFeatureVector(vector=vector, n_cells=0, low_support=True)
    feats = db.features[cell_indices]
    for j in range(N_FEATURES):
        col = np.sort(feats[:, j])
        vector[j * N_THRESHOLDS : (j + 1) * N_THRESHOLDS] = (
            np.searchsorted(col, grid.thresholds[j], side="right") / n
        )
    if db.resolution_um is not None:
        area_mm2 = region_area_px * (db.resolution_um * 1e-3) ** 2
        vector[DENSITY_INDEX] = n / area_mm2
    else:
        vector[DENSITY_INDEX] = n / region_area_px
    vector[AREA_RATIO_INDEX] = min(1.0, float(db.areas[cell_indices].sum()) / region_area_px)
    return RegionFeatureVector(vector=vector, n_cells=n, low_support=n < min_cells)


@dataclass(frozen=True)
class Tile:
    """Square region: rows [row0, row0+side), cols [col0, col0+side)."""

    row0: int
    col0: int
    side: int

    def polygon(self) -> np.ndarray:
        return rectangle_polygon(self.row0, self.col0, self.side, self.side)

    @property
    def area(self) -> int:
        return self.side * self.side


def tile_section(height: int, width: int, side: int, stride: int) -> List[Tile]:
    """All fully contained tiles on a regular grid with the given stride."""
    if side < 1 or stride < 1:
        raise ValueError("side and stride must be positive")
    if side > height or side > width:
        raise ValueError(f"tile side {side} exceeds section dims {height}x{width}")
    tiles = []
    for r in range(0, height - side + 1, stride):
        for c in range(0, width - side + 1, stride):
            tiles.append(Tile(row0=r, col0=c, side=side))
    return tiles


def tile_grid_shape(height: int, width: int, side: int, stride: int) -> Tuple[int, int]:
    if height < side or width < side:
        return 0, 0
    return (height - side) // stride + 1, (width - side) // stride + 1


def label_tile(tile: Tile, polygon: np.ndarray) -> bool:
    """True when more than half of the tile's pixels have their center inside
    the structure outline."""
    polygon = as_polygon(polygon)
    rr, cc = np.mgrid[tile.row0 : tile.row0 + tile.side, tile.col0 : tile.col0 + tile.side]
    pts = np.column_stack([cc.ravel(), rr.ravel()]).astype(np.float64)
    inside = points_in_polygon(pts, polygon)
    return int(inside.sum()) * 2 > tile.area


def label_tiles(tiles: Sequence[Tile], polygon: np.ndarray, height: int, width: int) -> np.ndarray:
    """Vectorized label_tile over many tiles via one rasterization pass."""
    from .geometry import polygon_mask

    mask = polygon_mask(polygon, height, width)
    integral = np.zeros((height + 1, width + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    out = np.zeros(len(tiles), dtype=bool)
    for i, t in enumerate(tiles):
        r1, c1 = t.row0 + t.side, t.col0 + t.side
        count = integral[r1, c1] - integral[t.row0, c1] - integral[r1, t.col0] + integral[t.row0, t.col0]
        out[i] = int(count) * 2 > t.area
    return out


@dataclass
class StructureAnnotation:
    """Named structure outline on one section; polygon vertices are (x, y)."""

    section_id: str
    name: str
    polygon: np.ndarray

    def __post_init__(self) -> None:
        self.polygon = as_polygon(self.polygon)

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


def save_annotations(annotations: Sequence[StructureAnnotation], path: str) -> None:
    records = [
        {"section_id": a.section_id, "name": a.name, "polygon": a.polygon.tolist()}
        for a in annotations
    ]
    atomic_write_text(path, json.dumps(records, sort_keys=True, indent=2) + "\n")


def load_annotations(path: str) -> List[StructureAnnotation]:
    with open(path) as fh:
        records = json.load(fh)
    return [
        StructureAnnotation(section_id=r["section_id"], name=r["name"], polygon=np.array(r["polygon"]))
        for r in records
    ]


def tile_cell_indices(db: CellFeatureDB, section_id: str, tile: Tile) -> np.ndarray:
    return db.query_rect(section_id, tile.row0, tile.row0 + tile.side, tile.col0, tile.col0 + tile.side)


@dataclass
class LabeledTileMatrix:
    """Region features + per-structure labels for every tile of a section set."""

    features: np.ndarray
    low_support: np.ndarray
    n_cells: np.ndarray
    origins: np.ndarray
    section_ids: List[str]
    labels: Dict[str, np.ndarray]
    tile_side: int

    def __len__(self) -> int:
        return len(self.features)


def build_labeled_tiles(
    db: CellFeatureDB,
    grid: ThresholdGrid,
    annotations: Sequence[StructureAnnotation],
    section_dims: Dict[str, Tuple[int, int]],
    side: int,
    stride: int,
    min_cells: int = 5,
    structures: Optional[Sequence[str]] = None,
) -> LabeledTileMatrix:
    """Tile the given sections, compute region features, and label every tile
    against every structure outline (absent outline on a section = negative).
    """
    names = sorted({a.name for a in annotations}) if structures is None else list(structures)
    by_key = {(a.section_id, a.name): a for a in annotations}
    rows: List[np.ndarray] = []
    flags: List[bool] = []
    counts: List[int] = []
    origins: List[Tuple[int, int]] = []
    section_ids: List[str] = []
    labels: Dict[str, List[bool]] = {name: [] for name in names}
    for sid in sorted(section_dims):
        height, width = section_dims[sid]
        tiles = tile_section(height, width, side, stride)
        per_structure = {}
        for name in names:
            ann = by_key.get((sid, name))
            if ann is None:
                per_structure[name] = np.zeros(len(tiles), dtype=bool)
            else:
                per_structure[name] = label_tiles(tiles, ann.polygon, height, width)
        for i, tile in enumerate(tiles):
            idx = tile_cell_indices(db, sid, tile)
            rf = region_feature(db, grid, idx, float(tile.area), min_cells=min_cells)
            rows.append(rf.vector)
            flags.append(rf.low_support)
            counts.append(rf.n_cells)
            origins.append((tile.row0, tile.col0))
            section_ids.append(sid)
            for name in names:
                labels[name].append(bool(per_structure[name][i]))
    return LabeledTileMatrix(
        features=np.array(rows, dtype=np.float64).reshape(-1, REGION_DIM),
        low_support=np.array(flags, dtype=bool),
        n_cells=np.array(counts, dtype=np.int64),
        origins=np.array(origins, dtype=np.int64).reshape(-1, 2),
        section_ids=section_ids,
        labels={name: np.array(vals, dtype=bool) for name, vals in labels.items()},
        tile_side=side,
    )


def save_tile_matrix(matrix: LabeledTileMatrix, path: str) -> None:
    arrays = {
        "features": matrix.features,
        "low_support": matrix.low_support.astype(np.int64),
        "n_cells": matrix.n_cells,
        "origins": matrix.origins,
    }
    for name in matrix.labels:
        arrays[f"label:{name}"] = matrix.labels[name].astype(np.int64)
    binio.write_arrays(
        path,
        arrays,
        kind="tile_matrix",
        meta={
            "section_ids": matrix.section_ids,
            "structures": sorted(matrix.labels),
            "tile_side": matrix.tile_side,
        },
    )


def load_tile_matrix(path: str) -> LabeledTileMatrix:
    arrays, meta = binio.read_arrays(path, expect_kind="tile_matrix")
    labels = {name: arrays[f"label:{name}"].astype(bool) for name in meta["structures"]}
    return LabeledTileMatrix(
        features=arrays["features"],
        low_support=arrays["low_support"].astype(bool),
        n_cells=arrays["n_cells"],
        origins=arrays["origins"],
        section_ids=list(meta["section_ids"]),
        labels=labels,
        tile_side=int(meta["tile_side"]),
    )
