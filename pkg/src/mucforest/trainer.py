"""Minimal CART-style random forest trainer.

Greedy Gini splits with midpoint thresholds between consecutive distinct
sorted values, bootstrap row sampling, and sqrt feature subsampling. Leaves
store the class frequency vector of the training rows reaching them. Split
ties break deterministically to the lowest feature index, then the lowest
threshold, so a fixed seed reproduces the forest bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .forest_model import Dataset, Forest, Node, Tree, predict_batch


@dataclass(frozen=True)
class TrainParams:
    n_trees: int = 15
    max_depth: int = 5
    min_samples_leaf: int = 1
    bootstrap: bool = True
    features_per_split: int | str = "sqrt"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if isinstance(self.features_per_split, str) and self.features_per_split != "sqrt":
            raise ValueError("features_per_split must be an int or 'sqrt'")

    def with_seed(self, seed: int) -> "TrainParams":
        return replace(self, rng_seed=seed)


def _resolve_features_per_split(params: TrainParams, d: int) -> int:
    if params.features_per_split == "sqrt":
        return max(1, int(math.isqrt(d)))
    return min(max(1, int(params.features_per_split)), d)


def _best_split(X, y_idx, rows, feats, n_classes, min_leaf):
    """Best (weighted child Gini, feature, threshold) over candidate features.

    Returns None when no feature admits a split respecting min_leaf. Lower
    Gini wins; ties keep the earlier feature / lower threshold because the
    comparison is strict and candidates are scanned in ascending order.
    """
    n = rows.shape[0]
    best = None
    for f in feats:
        values = X[rows, f]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        sy = y_idx[rows][order]
        boundaries = np.nonzero(sv[:-1] < sv[1:])[0]
        if boundaries.size == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), sy] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[boundaries]
        n_left = boundaries + 1.0
        n_right = n - n_left
        keep = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not keep.any():
            continue
        right_counts = onehot.sum(axis=0) - left_counts[keep]
        lc = left_counts[keep]
        nl = n_left[keep]
        nr = n_right[keep]
        gini_left = 1.0 - ((lc / nl[:, None]) ** 2).sum(axis=1)
        gini_right = 1.0 - ((right_counts / nr[:, None]) ** 2).sum(axis=1)
        score = (nl * gini_left + nr * gini_right) / n
        pos = int(np.argmin(score))
        if best is None or score[pos] < best[0]:
            b = boundaries[keep][pos]
            threshold = 0.5 * (sv[b] + sv[b + 1])
            best = (float(score[pos]), int(f), threshold)
    return best


def _grow_tree(X, y_idx, rows, depth, params, n_classes, fps, rng, nodes):
    counts = np.bincount(y_idx[rows], minlength=n_classes).astype(float)
    probs = counts / counts.sum()
    if depth >= params.max_depth or rows.shape[0] < 2 * params.min_samples_leaf \
            or np.count_nonzero(counts) <= 1:
        nodes.append(Node.leaf(probs))
        return len(nodes) - 1
    d = X.shape[1]
    feats = np.sort(rng.choice(d, size=fps, replace=False))
    best = _best_split(X, y_idx, rows, feats, n_classes, params.min_samples_leaf)
    if best is None:
        nodes.append(Node.leaf(probs))
        return len(nodes) - 1
    _, f, threshold = best
    mask = X[rows, f] <= threshold
    left = _grow_tree(X, y_idx, rows[mask], depth + 1, params, n_classes, fps, rng, nodes)
    right = _grow_tree(X, y_idx, rows[~mask], depth + 1, params, n_classes, fps, rng, nodes)
    nodes.append(Node.split(f, threshold, left, right))
    return len(nodes) - 1


def train_forest(dataset: Dataset, params: TrainParams) -> Forest:
    """Fit a forest on the dataset. Deterministic for a fixed rng_seed."""
    n = dataset.n_rows
    if n < 2:
        raise ValueError("need at least 2 samples to train")
    y = dataset.y
    n_classes = max(2, int(y.max()) + 1)
    if np.unique(y).size < 2:
        warnings.warn(
            "single-class dataset: training a degenerate constant forest",
            stacklevel=2,
        )
    fps = _resolve_features_per_split(params, dataset.n_features)
    seeds = np.random.SeedSequence(params.rng_seed).spawn(params.n_trees)
    trees = []
    for tree_seed in seeds:
        rng = np.random.default_rng(tree_seed)
        if params.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        nodes: list[Node] = []
        root = _grow_tree(dataset.X, y, rows, 0, params, n_classes, fps, rng, nodes)
        trees.append(Tree(nodes=tuple(nodes), root=root))
    return Forest(
        trees=tuple(trees),
        n_classes=n_classes,
        n_features=dataset.n_features,
        feature_names=dataset.feature_names,
    )


def evaluate_accuracy(forest: Forest, dataset: Dataset) -> float:
    if dataset.n_rows == 0:
        raise ValueError("empty dataset")
    classes, _ = predict_batch(forest, dataset.X)
    return float(np.mean(classes == dataset.y))
