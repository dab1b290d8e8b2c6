"""Per-tile detector scores rendered over a section.

Tiles are scored independently (region feature + detector); overlapping tiles
are averaged per pixel at render time. Tiles with too few cells keep their raw
score in the sidecar but render as probability 0 and carry a flag, so sparse
corners read as "no evidence" rather than confident background.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .boosting import BoostedModel
from .celldb import CellFeatureDB
from .manifest import atomic_write_text
from .regional import RegionFeatureVector, ThresholdGrid, Tile, region_feature, tile_section


@dataclass
class ProbabilityMap:
    section_id: str
    side: int
    stride: int
    tiles: List[Tile]
    probabilities: np.ndarray
    low_support: np.ndarray
    n_cells: np.ndarray

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.low_support = np.asarray(self.low_support, dtype=bool)
        self.n_cells = np.asarray(self.n_cells, dtype=np.int64)
        n = len(self.tiles)
        if not (len(self.probabilities) == len(self.low_support) == len(self.n_cells) == n):
            raise ValueError("per-tile arrays must match the tile list")
        if np.any((self.probabilities < 0) | (self.probabilities > 1)):
            raise ValueError("probabilities must lie in [0, 1]")


def probability_map(
    section_id: str,
    height: int,
    width: int,
    db: CellFeatureDB,
    grid: ThresholdGrid,
    model: BoostedModel,
    side: int = 224,
    stride: int = 112,
    min_cells: int = 5,
) -> ProbabilityMap:
    tiles = tile_section(height, width, side, stride)
    probs = np.zeros(len(tiles), dtype=np.float64)
    flags = np.zeros(len(tiles), dtype=bool)
    counts = np.zeros(len(tiles), dtype=np.int64)
    features = np.zeros((len(tiles), grid.thresholds.size + 2), dtype=np.float64)
    for i, tile in enumerate(tiles):
        idx = db.query_rect(section_id, tile.row0, tile.row0 + tile.side, tile.col0, tile.col0 + tile.side)
        rf = region_feature(db, grid, idx, float(tile.area), min_cells=min_cells)
        features[i] = rf.vector
        flags[i] = rf.low_support
        counts[i] = rf.n_cells
    probs = model.predict_score(features)
    return ProbabilityMap(
        section_id=section_id,
        side=side,
        stride=stride,
        tiles=tiles,
        probabilities=probs,
        low_support=flags,
        n_cells=counts,
    )


def render_probability_map(pm: ProbabilityMap, height: int, width: int) -> np.ndarray:
    """Float image in [0, 1]: per-pixel mean over covering tiles, flagged
    tiles contributing probability 0, uncovered pixels 0."""
    acc = np.zeros((height, width), dtype=np.float64)
    cover = np.zeros((height, width), dtype=np.float64)
    for tile, p, flagged in zip(pm.tiles, pm.probabilities, pm.low_support):
        r1, c1 = tile.row0 + tile.side, tile.col0 + tile.side
        acc[tile.row0 : r1, tile.col0 : c1] += 0.0 if flagged else p
        cover[tile.row0 : r1, tile.col0 : c1] += 1.0
    out = np.zeros_like(acc)
    hit = cover > 0
    out[hit] = acc[hit] / cover[hit]
    return out


def save_probability_map(pm: ProbabilityMap, path: str) -> None:
    payload = {
        "kind": "probability_map",
        "section_id": pm.section_id,
        "side": pm.side,
        "stride": pm.stride,
        "origins": [[t.row0, t.col0] for t in pm.tiles],
        "probabilities": [float(p) for p in pm.probabilities],
        "low_support": [bool(f) for f in pm.low_support],
        "n_cells": [int(c) for c in pm.n_cells],
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_probability_map(path: str) -> ProbabilityMap:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "probability_map":
        raise ValueError(f"{path}: not a probability map file")
    side = int(payload["side"])
    tiles = [Tile(row0=int(r), col0=int(c), side=side) for r, c in payload["origins"]]
    return ProbabilityMap(
        section_id=payload["section_id"],
        side=side,
        stride=int(payload["stride"]),
        tiles=tiles,
        probabilities=np.array(payload["probabilities"], dtype=np.float64),
        low_support=np.array(payload["low_support"], dtype=bool),
        n_cells=np.array(payload["n_cells"], dtype=np.int64),
    )
