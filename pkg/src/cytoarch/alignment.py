"""Affine alignment of diffusion embeddings across brains.

Embeddings fit on different brains agree only up to axis order, orientation,
and mild distortion, so features from a new brain are mapped into the
reference coordinate system with an affine map minimizing the mean squared
residual over paired points. The minimizer is closed form: center both point
sets, solve the normal equations for the linear part, recover the shift from
the means.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import binio


@dataclass
class AffineMap:
    """x -> shift + linear @ x."""

    shift: np.ndarray
    linear: np.ndarray

    def __post_init__(self) -> None:
        self.shift = np.asarray(self.shift, dtype=np.float64)
        self.linear = np.asarray(self.linear, dtype=np.float64)
        if self.linear.ndim != 2 or self.linear.shape[0] != self.linear.shape[1]:
            raise ValueError("linear part must be a square matrix")
        if self.shift.shape != (self.linear.shape[0],):
            raise ValueError("shift dimension must match the linear part")

    @property
    def dim(self) -> int:
        return len(self.shift)


def apply_affine(affine: AffineMap, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    if single:
        points = points[None]
    out = points @ affine.linear.T + affine.shift[None, :]
    return out[0] if single else out


def alignment_cost(affine: AffineMap, source: np.ndarray, target: np.ndarray) -> float:
    """Mean squared residual (1/n) sum ||shift + linear a_i - b_i||^2."""
    residual = apply_affine(affine, source) - np.asarray(target, dtype=np.float64)
    return float(np.mean(np.sum(residual ** 2, axis=1)))


def alignment_gradient(affine: AffineMap, source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of alignment_cost w.r.t. (shift, linear); zero at the optimum."""
    source = np.asarray(source, dtype=np.float64)
    residual = apply_affine(affine, source) - np.asarray(target, dtype=np.float64)
    n = len(source)
    grad_shift = 2.0 * residual.mean(axis=0)
    grad_linear = (2.0 / n) * residual.T @ source
    return grad_shift, grad_linear


def fit_affine_alignment(source: np.ndarray, target: np.ndarray) -> AffineMap:
    """Least-squares affine map sending source points onto target points.

    Solves cov(source) @ linear.T = cov(source, target) on centered data.
    Raises when the source points do not span all dimensions (the linear part
    would be underdetermined along the deficient directions).
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise ValueError("source and target must be paired point sets of equal shape")
    if source.ndim != 2:
        raise ValueError("expected (n, d) point arrays")
    n, d = source.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} pairs to determine a {d}-d affine map, got {n}")
    mu_a = source.mean(axis=0)
    mu_b = target.mean(axis=0)
    a0 = source - mu_a
    b0 = target - mu_b
    cov_aa = a0.T @ a0 / n
    cov_ab = a0.T @ b0 / n
    eigvals = np.linalg.eigvalsh(cov_aa)
    scale = max(eigvals.max(), 0.0)
    deficient = np.nonzero(eigvals <= scale * 1e-12)[0]
    if scale <= 0.0 or len(deficient) > 0:
        raise ValueError(
            f"source covariance is singular ({len(deficient) if scale > 0 else d} deficient "
            "directions); points must span all dimensions"
        )
    linear = np.linalg.solve(cov_aa, cov_ab).T
    shift = mu_b - linear @ mu_a
    return AffineMap(shift=shift, linear=linear)


def align_brain_features(new_model, reference_model, m: int = 10) -> AffineMap:
    """Map a brain's diffusion coordinates into the reference brain's space.

    The reference representatives serve as the shared point set: each is
    embedded under both models, and the affine map is fit from the new
    model's coordinates to the reference's.
    """
    from .diffusion import embed_many

    anchors = reference_model.representatives
    source = embed_many(new_model, anchors, m=m)
    target = embed_many(reference_model, anchors, m=m)
    return fit_affine_alignment(source, target)


def save_affine(affine: AffineMap, path: str) -> None:
    binio.write_arrays(path, {"shift": affine.shift, "linear": affine.linear}, kind="affine_map")


def load_affine(path: str) -> AffineMap:
    arrays, _ = binio.read_arrays(path, expect_kind="affine_map")
    return AffineMap(shift=arrays["shift"], linear=arrays["linear"])
