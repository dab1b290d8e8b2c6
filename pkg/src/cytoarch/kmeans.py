"""Streaming k-means for choosing representative patches.

The corpus of patches can be far larger than memory, so fitting runs in three
stages over an iterable of chunks: (1) reservoir-sample a seeding set and
count the corpus, (2) kmeans++ on the sample, (3) a few streaming refinement
epochs with per-batch center updates, equivalent to one Lloyd step per epoch.
A final assignment pass recomputes exact cluster means and drops clusters
smaller than min_cluster.
"""
from __future__ import annotations

from typing import Callable, Iterable, List, Tuple

import numpy as np


def _as_chunks(data) -> Callable[[], Iterable[np.ndarray]]:
    if callable(data):
        return data
    arr = np.asarray(data, dtype=np.float64)

    def once():
        yield arr

    return once


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances without forming (n, k, d)
    p2 = np.sum(points ** 2, axis=1)[:, None]
    c2 = np.sum(centers ** 2, axis=1)[None, :]
    d2 = p2 + c2 - 2.0 * points @ centers.T
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """kmeans++ seeding. If the sample has <= k distinct rows they all become
    centers, so tiny inputs are reproduced exactly."""
    points = np.asarray(points, dtype=np.float64)
    distinct = np.unique(points, axis=0)
    if len(distinct) <= k:
        return distinct.copy()
    centers = np.empty((k, points.shape[1]))
    idx = int(rng.integers(len(points)))
    centers[0] = points[idx]
    d2 = _pairwise_sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            centers[j] = points[int(rng.integers(len(points)))]
            continue
        probs = d2 / total
        idx = int(rng.choice(len(points), p=probs))
        centers[j] = points[idx]
        d2 = np.minimum(d2, _pairwise_sq_dists(points, centers[j : j + 1])[:, 0])
    return centers


def reservoir_sample(chunks: Callable[[], Iterable[np.ndarray]], size: int, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """Uniform sample of up to `size` rows from a stream plus the total count.

    Algorithm R, vectorized per chunk: row at global index i >= size lands in
    slot rng.integers(i + 1) if that slot is < size. Duplicate slots within a
    chunk resolve to the latest row, matching the sequential algorithm.
    """
    filled: List[np.ndarray] = []
    sample = None
    seen = 0
    for chunk in chunks():
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2:
            chunk = chunk.reshape(len(chunk), -1)
        start = 0
        if seen < size:
            take = min(size - seen, len(chunk))
            filled.append(chunk[:take].copy())
            seen += take
            start = take
            if seen == size:
                sample = np.concatenate(filled, axis=0)
        if start < len(chunk):
            tail = chunk[start:]
            slots = rng.integers(0, seen + 1 + np.arange(len(tail), dtype=np.int64))
            # hits thin out as seen grows, so the sequential writes stay cheap
            for j in np.nonzero(slots < size)[0]:
                sample[slots[j]] = tail[j]
            seen += len(tail)
    if seen == 0:
        raise ValueError("empty input stream")
    if sample is None:
        sample = np.concatenate(filled, axis=0)
    return sample, seen


def streaming_kmeans(
    data,
    k: int,
    min_cluster: int = 5,
    seed: int = 0,
    init_sample: int = 20000,
    n_passes: int = 3,
):
    """Fit k centers over a (possibly chunked) dataset and return the
    representatives: exact means of all clusters with >= min_cluster members.

    `data` is an array or a zero-argument callable yielding 2-d chunks; the
    callable is invoked once per pass. Returns (representatives, counts).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_passes < 1:
        raise ValueError("n_passes must be >= 1")
    chunks = _as_chunks(data)
    rng = np.random.default_rng(seed)
    sample, total = reservoir_sample(chunks, init_sample, rng)
    centers = kmeans_plus_plus(sample, k, rng)

    for _ in range(n_passes):
        sums = np.zeros_like(centers)
        counts = np.zeros(len(centers), dtype=np.int64)
        for chunk in chunks():
            chunk = np.asarray(chunk, dtype=np.float64)
            if chunk.ndim != 2:
                chunk = chunk.reshape(len(chunk), -1)
            assign = np.argmin(_pairwise_sq_dists(chunk, centers), axis=1)
            np.add.at(sums, assign, chunk)
            np.add.at(counts, assign, 1)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    # exact final assignment: means over the full stream, then support filter
    sums = np.zeros_like(centers)
    counts = np.zeros(len(centers), dtype=np.int64)
    for chunk in chunks():
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2:
            chunk = chunk.reshape(len(chunk), -1)
        assign = np.argmin(_pairwise_sq_dists(chunk, centers), axis=1)
        np.add.at(sums, assign, chunk)
        np.add.at(counts, assign, 1)
    keep = counts >= min_cluster
    if not np.any(keep):
        raise ValueError(f"no cluster reached min_cluster={min_cluster} members")
    reps = sums[keep] / counts[keep, None]
    return reps, counts[keep]


def kmeans_cost(points: np.ndarray, centers: np.ndarray) -> float:
    """Mean squared distance from each point to its nearest center."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        points = points.reshape(len(points), -1)
    d2 = _pairwise_sq_dists(points, np.asarray(centers, dtype=np.float64))
    return float(np.mean(np.min(d2, axis=1)))
