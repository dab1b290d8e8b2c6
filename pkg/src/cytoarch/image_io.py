"""Image and segment serialization.

Sections are stored as 8-bit grayscale PNG plus a JSON sidecar carrying
section_id and resolution. Segments are stored as NDJSON, one cell per line,
with pixel sets encoded as per-row run lengths to keep files small and diffable.
"""
from __future__ import annotations

import json
import os
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from .imaging import CellSegment, SectionImage
from .manifest import atomic_write_bytes, atomic_write_text


def save_section(image: SectionImage, png_path: str) -> None:
    """Write the pixels as grayscale PNG and metadata as <png>.json."""
    img = Image.fromarray(image.pixels, mode="L")
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(png_path, buf.getvalue())
    meta = {"section_id": image.section_id, "resolution_um": image.resolution_um}
    atomic_write_text(meta_path(png_path), json.dumps(meta, sort_keys=True) + "\n")


def meta_path(png_path: str) -> str:
    return png_path + ".json"


def load_section(png_path: str, section_id: Optional[str] = None) -> SectionImage:
    """Load a grayscale PNG; the sidecar supplies id/resolution when present."""
    img = Image.open(png_path)
    if img.mode != "L":
        img = img.convert("L")
    pixels = np.asarray(img, dtype=np.uint8)
    resolution = None
    sid = section_id
    if os.path.exists(meta_path(png_path)):
        with open(meta_path(png_path)) as fh:
            meta = json.load(fh)
        resolution = meta.get("resolution_um")
        if sid is None:
            sid = meta.get("section_id")
    if sid is None:
        sid = os.path.splitext(os.path.basename(png_path))[0]
    return SectionImage(pixels=pixels, section_id=sid, resolution_um=resolution)


def encode_runs(coords: np.ndarray) -> List[List[int]]:
    """Encode sorted pixel coords as [row, col_start, length] runs."""
    coords = coords[np.lexsort((coords[:, 1], coords[:, 0]))]
    runs: List[List[int]] = []
    for r, c in coords:
        if runs and runs[-1][0] == r and runs[-1][1] + runs[-1][2] == c:
            runs[-1][2] += 1
        else:
            runs.append([int(r), int(c), 1])
    return runs


def decode_runs(runs: List[List[int]]) -> np.ndarray:
    rows = []
    for r, c, n in runs:
        rows.append(np.column_stack([np.full(n, r, dtype=np.int64), np.arange(c, c + n, dtype=np.int64)]))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 2), dtype=np.int64)


def save_segments(segments: List[CellSegment], path: str) -> None:
    lines = []
    for seg in segments:
        record = {
            "cell_id": seg.cell_id,
            "section_id": seg.section_id,
            "runs": encode_runs(seg.pixel_coords),
        }
        lines.append(json.dumps(record, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_segments(path: str) -> List[CellSegment]:
    segments = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            segments.append(
                CellSegment(
                    cell_id=record["cell_id"],
                    section_id=record["section_id"],
                    pixel_coords=decode_runs(record["runs"]),
                )
            )
    return segments


def save_patch_stack(patches: np.ndarray, path: str) -> None:
    """Store an (n, s, s) float64 patch stack in the binary container format."""
    from .binio import write_arrays

    write_arrays(path, {"patches": np.asarray(patches, dtype=np.float64)}, kind="patch_stack")


def load_patch_stack(path: str) -> np.ndarray:
    from .binio import read_arrays

    arrays, _ = read_arrays(path, expect_kind="patch_stack")
    return arrays["patches"]
