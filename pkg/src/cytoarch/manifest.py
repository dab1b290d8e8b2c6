"""Atomic file writes and run manifests.

Every CLI step records a manifest next to its outputs: parameters, input file
hashes, output file hashes. No timestamps or hostnames go in, so re-running a
step with identical inputs yields byte-identical artifacts.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Dict, Iterable, Optional


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def params_digest(params: Dict) -> str:
    return sha256_bytes(json.dumps(params, sort_keys=True).encode("utf-8"))


def write_manifest(
    path: str,
    step: str,
    params: Dict,
    inputs: Optional[Iterable[str]] = None,
    outputs: Optional[Iterable[str]] = None,
) -> None:
    manifest = {
        "step": step,
        "params": params,
        "params_sha256": params_digest(params),
        "inputs": {os.path.basename(p): sha256_file(p) for p in sorted(inputs or [])},
        "outputs": {os.path.basename(p): sha256_file(p) for p in sorted(outputs or [])},
    }
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
