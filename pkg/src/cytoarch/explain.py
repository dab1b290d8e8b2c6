"""Why did the detector fire: feature importance and cell highlighting.

Importance aggregates split gain per region-feature index and renders names
like "rotation_angle-11.3" (cell-feature family + the CDF threshold the split
tested). Highlighting tints the cells whose feature value lies in a chosen
range, and compares feature CDFs between high-margin and low-margin tiles so
a top feature can be traced back to the cell population driving it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosting import BoostedModel, feature_gain_totals
from .celldb import CellFeatureDB
from .features import FEATURE_NAMES, N_FEATURES
from .imaging import CellSegment, SectionImage
from .manifest import atomic_write_text
from .regional import (
    AREA_RATIO_INDEX,
    DENSITY_INDEX,
    N_THRESHOLDS,
    ThresholdGrid,
    Tile,
    region_feature,
)
from .render import tint_overlay


def region_feature_name(index: int, grid: ThresholdGrid) -> str:
    """Human name of a region-feature index: family plus threshold value."""
    if index == DENSITY_INDEX:
        return "density"
    if index == AREA_RATIO_INDEX:
        return "area_ratio"
    if not 0 <= index < N_FEATURES * N_THRESHOLDS:
        raise ValueError(f"region feature index {index} out of range")
    family, k = divmod(index, N_THRESHOLDS)
    return f"{FEATURE_NAMES[family]}-{grid.thresholds[family, k]:.4g}"


def family_of_region_index(index: int) -> str:
    """Cell-feature family a region-feature index belongs to."""
    if index == DENSITY_INDEX:
        return "density"
    if index == AREA_RATIO_INDEX:
        return "area_ratio"
    return FEATURE_NAMES[index // N_THRESHOLDS]


@dataclass
class ImportanceEntry:
    index: int
    name: str
    gain: float
    cover: float
    n_splits: int


@dataclass
class ImportanceReport:
    entries: List[ImportanceEntry]

    @property
    def total_gain(self) -> float:
        return sum(e.gain for e in self.entries)

    def top(self, n: int = 10) -> List[ImportanceEntry]:
        return self.entries[:n]


def feature_importance(model: BoostedModel, grid: ThresholdGrid) -> ImportanceReport:
    """Per-feature gain/cover/split-count over the ensemble, ranked by gain."""
    gains: Dict[int, float] = {}
    covers: Dict[int, float] = {}
    counts: Dict[int, int] = {}

    def walk(node) -> None:
        if node.is_leaf:
            return
        gains[node.feature] = gains.get(node.feature, 0.0) + node.gain
        covers[node.feature] = covers.get(node.feature, 0.0) + node.cover
        counts[node.feature] = counts.get(node.feature, 0) + 1
        walk(node.left)
        walk(node.right)

    for tree in model.trees:
        walk(tree)
    entries = [
        ImportanceEntry(
            index=i,
            name=region_feature_name(i, grid),
            gain=gains[i],
            cover=covers[i],
            n_splits=counts[i],
        )
        for i in gains
    ]
    entries.sort(key=lambda e: (-e.gain, e.index))
    return ImportanceReport(entries=entries)


def save_importance_csv(report: ImportanceReport, path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "index", "name", "gain", "cover", "n_splits"])
    for rank, e in enumerate(report.entries, start=1):
        writer.writerow([rank, e.index, e.name, repr(float(e.gain)), repr(float(e.cover)), e.n_splits])
    atomic_write_text(path, buf.getvalue())


def select_cells_in_range(
    db: CellFeatureDB, section_id: str, family: str, lo: float, hi: float
) -> np.ndarray:
    """DB indices of the section's cells with the named feature in [lo, hi]."""
    if family not in FEATURE_NAMES:
        raise ValueError(f"unknown feature {family!r}; expected one of {FEATURE_NAMES}")
    j = FEATURE_NAMES.index(family)
    idx = db.section_indices(section_id)
    vals = db.features[idx, j]
    return idx[(vals >= lo) & (vals <= hi)]


def highlight_cells(
    image: SectionImage,
    segments: Sequence[CellSegment],
    db: CellFeatureDB,
    family: str,
    lo: float,
    hi: float,
    alpha: float = 0.65,
) -> Tuple[np.ndarray, List[str]]:
    """Tint the cells whose feature lies in [lo, hi]; others untouched.

    Returns the RGB overlay and the tinted cell ids. Segments supply the
    pixel sets; cells present in the DB but missing a segment are skipped.
    """
    selected = select_cells_in_range(db, image.section_id, family, lo, hi)
    chosen = {db.cell_ids[i] for i in selected}
    mask = np.zeros(image.pixels.shape, dtype=bool)
    tinted = []
    for seg in segments:
        if seg.cell_id in chosen:
            mask[seg.pixel_coords[:, 0], seg.pixel_coords[:, 1]] = True
            tinted.append(seg.cell_id)
    return tint_overlay(image.pixels, mask, alpha=alpha), tinted


def margin_region_cells(
    db: CellFeatureDB,
    grid: ThresholdGrid,
    model: BoostedModel,
    section_id: str,
    tiles: Sequence[Tile],
    margin_high: float = 1.0,
    margin_low: float = -1.0,
    min_cells: int = 5,
) -> Tuple[np.ndarray, np.ndarray]:
    """Split a section's cells by detector confidence at the tile level.

    Returns (high_idx, low_idx): DB indices of cells inside tiles whose
    pre-sigmoid margin exceeds margin_high, respectively falls below
    margin_low. Low-support tiles are ignored on both sides.
    """
    high: List[np.ndarray] = []
    low: List[np.ndarray] = []
    for tile in tiles:
        idx = db.query_rect(section_id, tile.row0, tile.row0 + tile.side, tile.col0, tile.col0 + tile.side)
        rf = region_feature(db, grid, idx, float(tile.area), min_cells=min_cells)
        if rf.low_support:
            continue
        margin = float(model.predict_margin(rf.vector))
        if margin > margin_high:
            high.append(idx)
        elif margin < margin_low:
            low.append(idx)
    high_idx = np.unique(np.concatenate(high)) if high else np.zeros(0, dtype=np.int64)
    low_idx = np.unique(np.concatenate(low)) if low else np.zeros(0, dtype=np.int64)
    return high_idx, low_idx


def cdf_series(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Empirical CDF of `values` evaluated at each threshold."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        return np.zeros(len(thresholds), dtype=np.float64)
    return np.searchsorted(values, thresholds, side="right") / len(values)


def cdf_comparison(
    db: CellFeatureDB,
    grid: ThresholdGrid,
    family: str,
    high_idx: np.ndarray,
    low_idx: np.ndarray,
) -> Dict[str, np.ndarray]:
    """Plot-ready CDF curves of one feature for two cell groups."""
    if family not in FEATURE_NAMES:
        raise ValueError(f"unknown feature {family!r}; expected one of {FEATURE_NAMES}")
    j = FEATURE_NAMES.index(family)
    thresholds = grid.thresholds[j]
    return {
        "thresholds": thresholds.copy(),
        "cdf_high": cdf_series(db.features[high_idx, j], thresholds),
        "cdf_low": cdf_series(db.features[low_idx, j], thresholds),
    }


def save_cdf_csv(comparison: Dict[str, np.ndarray], family: str, path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{family}_threshold", "cdf_high_margin", "cdf_low_margin"])
    for t, hi, lo in zip(comparison["thresholds"], comparison["cdf_high"], comparison["cdf_low"]):
        writer.writerow([repr(float(t)), repr(float(hi)), repr(float(lo))])
    atomic_write_text(path, buf.getvalue())
