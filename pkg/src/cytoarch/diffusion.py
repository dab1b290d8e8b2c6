"""Diffusion-map embedding of cell patches.

The map is fit once on a small set of representative patches and extended to
every cell with the Nystrom formula, so embedding a new patch never requires
refitting. Normalization uses the density-corrected (alpha = 1) variant: the
raw Gaussian kernel is divided by the sampling density on both sides before
the diffusion operator is built, which makes the embedding insensitive to how
unevenly the representatives cover shape space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import binio

_TINY = 1e-300


@dataclass
class DiffusionModel:
    """Fitted diffusion map over representative patches.

    representatives: (n, d) flattened patches the kernel is anchored on.
    eigenvalues: (n_evecs,) spectrum of the diffusion operator, descending,
        trivial unit eigenvalue removed.
    eigenvectors: (n, n_evecs) right eigenvectors (diffusion coordinates per
        representative, before eigenvalue scaling).
    kernel_row_sums: (n,) raw-kernel density estimates q used for the
        alpha-normalization of out-of-sample rows.
    epsilon: kernel bandwidth actually used.
    alpha: density-correction exponent.
    """

    representatives: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_row_sums: np.ndarray
    epsilon: float
    alpha: float

    @property
    def n_evecs(self) -> int:
        return len(self.eigenvalues)

    def training_embedding(self, m: Optional[int] = None) -> np.ndarray:
        """Embedding of the representatives themselves: lambda_j * psi_j."""
        m = self.n_evecs if m is None else m
        return self.eigenvectors[:, :m] * self.eigenvalues[:m][None, :]


def _flatten(patches: np.ndarray) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 1:
        return patches[None, :]
    return patches.reshape(len(patches), -1)


def median_sq_distance(points: np.ndarray) -> float:
    """Median pairwise squared distance, the default bandwidth heuristic."""
    points = _flatten(points)
    d2 = _sq_dists(points, points)
    iu = np.triu_indices(len(points), k=1)
    vals = d2[iu]
    if len(vals) == 0:
        raise ValueError("need at least two points")
    return float(np.median(vals))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a2 = np.sum(a ** 2, axis=1)[:, None]
    b2 = np.sum(b ** 2, axis=1)[None, :]
    d2 = a2 + b2 - 2.0 * a @ b.T
    np.maximum(d2, 0.0, out=d2)
    return d2


def fit_diffusion_map(
    representatives: np.ndarray,
    epsilon: float = 5000.0,
    alpha: float = 1.0,
    n_evecs: int = 100,
) -> DiffusionModel:
    """Fit the diffusion operator on representative patches.

    epsilon <= 0 requests the median-pairwise-squared-distance bandwidth.
    Raises if there are not enough representatives to produce n_evecs
    nontrivial eigenvectors.
    """
    reps = _flatten(representatives)
    n = len(reps)
    if n < n_evecs + 1:
        raise ValueError(f"need at least {n_evecs + 1} representatives for {n_evecs} eigenvectors, got {n}")
    if epsilon <= 0.0:
        epsilon = median_sq_distance(reps)
        if epsilon <= 0.0:
            raise ValueError("cannot derive a bandwidth: all representatives coincide")

    kernel = np.exp(-_sq_dists(reps, reps) / epsilon)
    q = kernel.sum(axis=1)
    k_alpha = kernel / np.outer(q ** alpha, q ** alpha)
    d = k_alpha.sum(axis=1)
    d_isqrt = 1.0 / np.sqrt(d)
    sym = k_alpha * np.outer(d_isqrt, d_isqrt)
    sym = (sym + sym.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    # right eigenvectors of the row-stochastic operator; drop trivial lambda=1
    psi = d_isqrt[:, None] * eigvecs
    eigvals = eigvals[1 : n_evecs + 1]
    psi = psi[:, 1 : n_evecs + 1]

    # deterministic eigenvector orientation: largest-magnitude entry positive
    for j in range(psi.shape[1]):
        pivot = np.argmax(np.abs(psi[:, j]))
        if psi[pivot, j] < 0.0:
            psi[:, j] = -psi[:, j]

    return DiffusionModel(
        representatives=reps.copy(),
        eigenvalues=eigvals.copy(),
        eigenvectors=psi,
        kernel_row_sums=q,
        epsilon=float(epsilon),
        alpha=float(alpha),
    )


def embed_many(model: DiffusionModel, patches: np.ndarray, m: Optional[int] = None) -> np.ndarray:
    """Nystrom extension: embed rows of `patches` into the diffusion space.

    A representative passed back in lands exactly on its training embedding.
    Raises when a patch is all zeros or too far from every representative for
    the kernel row to carry any mass.
    """
    pts = _flatten(patches)
    m = model.n_evecs if m is None else m
    if m > model.n_evecs:
        raise ValueError(f"model holds {model.n_evecs} eigenvectors, requested {m}")
    d = model.representatives.shape[1]
    if pts.shape[1] != d:
        raise ValueError(f"patch has {pts.shape[1]} values, model expects {d}")
    norms = np.linalg.norm(pts, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms == 0.0))
        raise ValueError(f"patch {bad} is all zeros; cannot embed an empty patch")
    kernel = np.exp(-_sq_dists(pts, model.representatives) / model.epsilon)
    row_max = kernel.max(axis=1)
    if np.any(row_max < _TINY):
        bad = int(np.argmax(row_max < _TINY))
        raise ValueError(
            f"patch {bad} is beyond kernel reach of every representative; embedding undefined"
        )
    q_y = kernel.sum(axis=1)
    k_alpha = kernel / (q_y[:, None] ** model.alpha * model.kernel_row_sums[None, :] ** model.alpha)
    p = k_alpha / k_alpha.sum(axis=1, keepdims=True)
    return p @ model.eigenvectors[:, :m]


def embed_patch(model: DiffusionModel, patch: np.ndarray, m: Optional[int] = None) -> np.ndarray:
    return embed_many(model, np.asarray(patch)[None], m=m)[0]


def save_model(model: DiffusionModel, path: str) -> None:
    binio.write_arrays(
        path,
        {
            "representatives": model.representatives,
            "eigenvalues": model.eigenvalues,
            "eigenvectors": model.eigenvectors,
            "kernel_row_sums": model.kernel_row_sums,
        },
        kind="diffusion_model",
        meta={"epsilon": model.epsilon, "alpha": model.alpha},
    )


def load_model(path: str) -> DiffusionModel:
    arrays, meta = binio.read_arrays(path, expect_kind="diffusion_model")
    return DiffusionModel(
        representatives=arrays["representatives"],
        eigenvalues=arrays["eigenvalues"],
        eigenvectors=arrays["eigenvectors"],
        kernel_row_sums=arrays["kernel_row_sums"],
        epsilon=float(meta["epsilon"]),
        alpha=float(meta["alpha"]),
    )
