"""Versioned binary container for named float arrays.

Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON header,
then the raw little-endian array blocks in header order. The header carries a
`kind` tag plus per-array name/dtype/shape/offset and optional JSON metadata,
so files are self-describing and loaders can reject mismatched kinds early.
"""
from __future__ import annotations

import json
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .manifest import atomic_write_bytes

MAGIC = b"CYTARCH\x00"
VERSION = 1
_SUPPORTED_DTYPES = {"float64": "<f8", "int64": "<i8"}


def write_arrays(
    path: str,
    arrays: Dict[str, np.ndarray],
    kind: str,
    meta: Optional[Dict] = None,
) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        blob = arr.astype(_SUPPORTED_DTYPES[dtype], copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"kind": kind, "arrays": entries, "meta": meta or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(header_bytes))
    out += header_bytes
    for blob in blobs:
        out += blob
    atomic_write_bytes(path, bytes(out))


def read_arrays(path: str, expect_kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict]:
    """Load all arrays and the metadata dict; validates magic/version/kind."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a cytoarch binary file")
    version, header_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header_start = len(MAGIC) + 8
    header = json.loads(data[header_start : header_start + header_len].decode("utf-8"))
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ValueError(f"{path}: kind {header['kind']!r}, expected {expect_kind!r}")
    body = header_start + header_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        np_dtype = np.dtype(_SUPPORTED_DTYPES[entry["dtype"]])
        start = body + entry["offset"]
        end = start + count * np_dtype.itemsize
        arr = np.frombuffer(data[start:end], dtype=np_dtype).reshape(shape)
        arrays[entry["name"]] = arr.copy()
    return arrays, header.get("meta", {})
