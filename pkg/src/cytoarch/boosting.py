"""Gradient-boosted decision trees for binary structure detection.

Newton boosting with logistic loss and exact greedy splits. Every split
enumerates all thresholds of all features, so training is deterministic:
ties are broken toward the lowest threshold within a feature and the lowest
feature index across features. Leaf weights are stored unscaled; the learning
rate is applied when trees are accumulated, so the margin after k rounds is
exactly the margin after k-1 rounds plus eta times the k-th tree's output.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .manifest import atomic_write_text


@dataclass
class TreeNode:
    """Internal split (feature/threshold/children) or leaf (weight).

    Split rule: x[feature] < threshold goes left. `gain` is the loss
    reduction of the split and `cover` the hessian mass reaching the node,
    kept for feature-importance reports.
    """

    weight: Optional[float] = None
    feature: Optional[int] = None
    threshold: Optional[float] = None
    gain: Optional[float] = None
    cover: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.weight is not None

    def to_dict(self) -> Dict:
        if self.is_leaf:
            return {"weight": self.weight}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "gain": self.gain,
            "cover": self.cover,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(d: Dict) -> "TreeNode":
        if "weight" in d:
            return TreeNode(weight=float(d["weight"]))
        return TreeNode(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            gain=float(d["gain"]),
            cover=float(d["cover"]),
            left=TreeNode.from_dict(d["left"]),
            right=TreeNode.from_dict(d["right"]),
        )


@dataclass
class BoostedModel:
    """Additive tree ensemble: margin(x) = base_score + eta * sum_t tree_t(x)."""

    base_score: float
    eta: float
    reg_lambda: float
    n_features: int
    trees: List[TreeNode] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)

    def predict_margin(self, X: np.ndarray, n_trees: Optional[int] = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        use = self.trees if n_trees is None else self.trees[:n_trees]
        margins = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in use:
            margins += self.eta * _tree_predict(tree, X)
        return margins[0] if single else margins

    def predict_score(self, X: np.ndarray, n_trees: Optional[int] = None) -> np.ndarray:
        margin = self.predict_margin(X, n_trees=n_trees)
        return _sigmoid(margin)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=np.float64)
    _tree_predict_into(node, X, np.arange(len(X)), out)
    return out


def _tree_predict_into(node: TreeNode, X: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[idx] = node.weight
        return
    go_left = X[idx, node.feature] < node.threshold
    _tree_predict_into(node.left, X, idx[go_left], out)
    _tree_predict_into(node.right, X, idx[~go_left], out)


def _leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return -g_sum / (h_sum + reg_lambda)


def _best_split(X, g, h, idx, reg_lambda, min_child_weight):
    """Exact greedy split search over the rows in idx, all features at once.

    Returns (gain, feature, threshold) of the best positive-gain split, or
    None. Candidate thresholds are midpoints between adjacent distinct values;
    if the midpoint collapses onto the left value in floating point, the right
    value is used so the intended partition is preserved under `x < thr`.
    Ties go to the lowest threshold within a feature (first maximum along the
    sorted order) and to the lowest feature index across features.
    """
    sub = X[idx]
    m = len(sub)
    g_total = g[idx].sum()
    h_total = h[idx].sum()
    parent = g_total * g_total / (h_total + reg_lambda)

    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    gs = np.cumsum(g[idx][order], axis=0)
    hs = np.cumsum(h[idx][order], axis=0)

    # candidate i splits sorted rows [0..i] | [i+1..m-1]; needs a value step
    gl, hl = gs[:-1], hs[:-1]
    gr, hr = g_total - gl, h_total - hl
    valid = (xs[1:] > xs[:-1]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    if not np.any(valid):
        return None
    gains = np.where(
        valid,
        0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent),
        -np.inf,
    )
    per_feature_pos = np.argmax(gains, axis=0)
    per_feature_gain = gains[per_feature_pos, np.arange(gains.shape[1])]
    j = int(np.argmax(per_feature_gain))
    best_gain = float(per_feature_gain[j])
    if best_gain <= 0.0 or not np.isfinite(best_gain):
        return None
    i = int(per_feature_pos[j])
    thr = (xs[i, j] + xs[i + 1, j]) / 2.0
    if not (xs[i, j] < thr):
        thr = xs[i + 1, j]
    return best_gain, j, float(thr)


def _grow_tree(X, g, h, idx, depth, reg_lambda, min_child_weight) -> TreeNode:
    if depth == 0 or len(idx) < 2:
        return TreeNode(weight=_leaf_weight(g[idx].sum(), h[idx].sum(), reg_lambda))
    split = _best_split(X, g, h, idx, reg_lambda, min_child_weight)
    if split is None:
        return TreeNode(weight=_leaf_weight(g[idx].sum(), h[idx].sum(), reg_lambda))
    gain, feature, threshold = split
    go_left = X[idx, feature] < threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        gain=gain,
        cover=float(h[idx].sum()),
        left=_grow_tree(X, g, h, idx[go_left], depth - 1, reg_lambda, min_child_weight),
        right=_grow_tree(X, g, h, idx[~go_left], depth - 1, reg_lambda, min_child_weight),
    )


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss of raw margins, stable for large |margin|."""
    margins = np.asarray(margins, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, margins) - y * margins))


def train_detector(
    X: np.ndarray,
    y: np.ndarray,
    rounds: int = 100,
    max_depth: int = 3,
    eta: float = 0.2,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
) -> BoostedModel:
    """Fit a binary detector. y holds {0, 1}; both classes must be present.

    The model starts from the log-odds of the positive rate and adds one
    depth-limited tree per round, fit to the Newton gradients of the logistic
    loss at the current margins. loss_history[r] is the training loss after r
    trees (entry 0 is the base-score loss).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    pos = float(y.mean())
    if pos == 0.0 or pos == 1.0:
        raise ValueError("training labels are all one class; a detector needs both")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    base = math.log(pos / (1.0 - pos))
    model = BoostedModel(
        base_score=base,
        eta=eta,
        reg_lambda=reg_lambda,
        n_features=X.shape[1],
    )
    margins = np.full(len(X), base, dtype=np.float64)
    model.loss_history.append(log_loss(margins, y))
    all_idx = np.arange(len(X))
    for _ in range(rounds):
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        tree = _grow_tree(X, g, h, all_idx, max_depth, reg_lambda, min_child_weight)
        model.trees.append(tree)
        margins += eta * _tree_predict(tree, X)
        model.loss_history.append(log_loss(margins, y))
    return model


def save_model(model: BoostedModel, path: str) -> None:
    payload = {
        "kind": "boosted_model",
        "version": 1,
        "base_score": model.base_score,
        "eta": model.eta,
        "reg_lambda": model.reg_lambda,
        "n_features": model.n_features,
        "trees": [t.to_dict() for t in model.trees],
        "loss_history": model.loss_history,
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_model(path: str) -> BoostedModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "boosted_model":
        raise ValueError(f"{path}: not a boosted model file")
    if payload.get("version") != 1:
        raise ValueError(f"{path}: unsupported model version")
    return BoostedModel(
        base_score=float(payload["base_score"]),
        eta=float(payload["eta"]),
        reg_lambda=float(payload["reg_lambda"]),
        n_features=int(payload["n_features"]),
        trees=[TreeNode.from_dict(t) for t in payload["trees"]],
        loss_history=[float(v) for v in payload["loss_history"]],
    )


def feature_gain_totals(model: BoostedModel) -> np.ndarray:
    """Total split gain per feature over the whole ensemble."""
    totals = np.zeros(model.n_features, dtype=np.float64)

    def walk(node: TreeNode) -> None:
        if node.is_leaf:
            return
        totals[node.feature] += node.gain
        walk(node.left)
        walk(node.right)

    for tree in model.trees:
        walk(tree)
    return totals
