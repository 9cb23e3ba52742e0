"""Random forest data model, prediction semantics and JSON interchange.

A forest is an immutable tuple of binary trees. Split nodes route a point
left when ``x[feature] <= threshold`` and right otherwise; leaves carry
normalized class-probability vectors. The predicted class is the argmax of
the per-class probability sums across trees (ties go to the lowest class
index), which equals the argmax of the mean since the 1/k factor is a
positive constant.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .exceptions import ModelFormatError

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Node:
    """One tree node; ``feature < 0`` marks a leaf."""

    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    probs: tuple[float, ...] = ()

    @classmethod
    def split(cls, feature: int, threshold: float, left: int, right: int) -> "Node":
        return cls(feature=feature, threshold=float(threshold), left=left, right=right)

    @classmethod
    def leaf(cls, probs: Iterable[float]) -> "Node":
        return cls(probs=tuple(float(p) for p in probs))

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class Tree:
    nodes: tuple[Node, ...]
    root: int = 0


@dataclass(frozen=True)
class FlatForest:
    """Forest flattened into the arrays the traversal kernels consume."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    probs: np.ndarray
    roots: np.ndarray


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    n_classes: int
    n_features: int
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_classes < 2:
            raise ModelFormatError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_features < 1:
            raise ModelFormatError(f"n_features must be >= 1, got {self.n_features}")
        if not self.trees:
            raise ModelFormatError("forest must contain at least one tree")
        if self.feature_names and len(self.feature_names) != self.n_features:
            raise ModelFormatError(
                f"{len(self.feature_names)} feature names for {self.n_features} features"
            )
        for t, tree in enumerate(self.trees):
            _validate_tree(tree, self.n_classes, self.n_features, f"trees[{t}]")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def flat(self) -> FlatForest:
        n_nodes = sum(len(t.nodes) for t in self.trees)
        feature = np.full(n_nodes, -1, dtype=np.int32)
        threshold = np.zeros(n_nodes)
        left = np.full(n_nodes, -1, dtype=np.int32)
        right = np.full(n_nodes, -1, dtype=np.int32)
        probs = np.zeros((n_nodes, self.n_classes))
        roots = np.zeros(self.n_trees, dtype=np.int32)
        base = 0
        for t, tree in enumerate(self.trees):
            roots[t] = base + tree.root
            for i, node in enumerate(tree.nodes):
                j = base + i
                if node.is_leaf:
                    probs[j] = node.probs
                else:
                    feature[j] = node.feature
                    threshold[j] = node.threshold
                    left[j] = base + node.left
                    right[j] = base + node.right
            base += len(tree.nodes)
        return FlatForest(feature, threshold, left, right, probs, roots)

    @cached_property
    def threshold_gap(self) -> np.ndarray:
        """Half the smallest gap between distinct thresholds, per feature.

        Used to nudge witness points off open interval bounds; features with
        fewer than two distinct thresholds fall back to 1e-6.
        """
        gap = np.full(self.n_features, 1e-6)
        flat = self.flat
        for i in range(self.n_features):
            thr = np.unique(flat.threshold[flat.feature == i])
            if thr.size >= 2:
                gap[i] = 0.5 * np.diff(thr).min()
        return gap


def _validate_tree(tree: Tree, n_classes: int, n_features: int, path: str) -> None:
    n = len(tree.nodes)
    if n == 0:
        raise ModelFormatError("tree has no nodes", path)
    if not 0 <= tree.root < n:
        raise ModelFormatError(f"root id {tree.root} out of range", path)
    seen = [False] * n
    stack = [tree.root]
    while stack:
        idx = stack.pop()
        where = f"{path}.nodes[{idx}]"
        if not 0 <= idx < n:
            raise ModelFormatError(f"dangling child id {idx}", where)
        if seen[idx]:
            raise ModelFormatError("node reached twice (cycle or shared child)", where)
        seen[idx] = True
        node = tree.nodes[idx]
        if node.is_leaf:
            if len(node.probs) != n_classes:
                raise ModelFormatError(
                    f"leaf has {len(node.probs)} probabilities, expected {n_classes}",
                    where,
                )
            if any(p < 0 for p in node.probs):
                raise ModelFormatError("negative leaf probability", where)
            if abs(math.fsum(node.probs) - 1.0) > PROB_TOL:
                raise ModelFormatError(
                    f"unnormalized leaf (sum {math.fsum(node.probs)!r})", where
                )
        else:
            if not 0 <= node.feature < n_features:
                raise ModelFormatError(
                    f"feature index {node.feature} out of range", where
                )
            if not math.isfinite(node.threshold):
                raise ModelFormatError("non-finite threshold", where)
            stack.append(node.left)
            stack.append(node.right)
    orphans = [i for i, s in enumerate(seen) if not s]
    if orphans:
        raise ModelFormatError(f"nodes unreachable from root: {orphans}", path)


def predict(forest: Forest, x: Sequence[float]) -> tuple[int, np.ndarray]:
    """Predicted class and mean class probabilities for one point.

    The class is the argmax of the mean probability vector across trees;
    argmax ties break to the lowest class index. Points on a threshold route
    left (``x <= threshold``).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (forest.n_features,):
        raise ValueError(f"expected {forest.n_features} features, got shape {x.shape}")
    f = forest.flat
    sums = kernels.class_sums_one(
        f.feature, f.threshold, f.left, f.right, f.probs, f.roots, x
    )
    return int(np.argmax(sums)), sums / forest.n_trees


def predict_batch(forest: Forest, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`predict`; returns (classes, mean probability rows)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected (m, {forest.n_features}) matrix, got {X.shape}")
    f = forest.flat
    sums = kernels.class_sums_batch(
        f.feature, f.threshold, f.left, f.right, f.probs, f.roots, X
    )
    return np.argmax(sums, axis=1), sums / forest.n_trees


# ---------------------------------------------------------------------------
# JSON interchange


def save_model(forest: Forest) -> bytes:
    doc = {
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "feature_names": list(forest.feature_names),
        "trees": [
            {
                "nodes": [
                    {"kind": "leaf", "probs": list(n.probs)}
                    if n.is_leaf
                    else {
                        "kind": "split",
                        "feature": n.feature,
                        "threshold": n.threshold,
                        "left": n.left,
                        "right": n.right,
                    }
                    for n in tree.nodes
                ],
                "root": tree.root,
            }
            for tree in forest.trees
        ],
    }
    return json.dumps(doc, indent=1).encode()


def load_model(data: bytes | str) -> Forest:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("top level must be an object")
    for key in ("n_classes", "n_features", "trees"):
        if key not in doc:
            raise ModelFormatError(f"missing key {key!r}")
    names = doc.get("feature_names") or []
    trees = []
    for t, tdoc in enumerate(doc["trees"]):
        path = f"trees[{t}]"
        if "nodes" not in tdoc or "root" not in tdoc:
            raise ModelFormatError("tree needs 'nodes' and 'root'", path)
        nodes = []
        for i, ndoc in enumerate(tdoc["nodes"]):
            where = f"{path}.nodes[{i}]"
            kind = ndoc.get("kind")
            if kind == "leaf":
                nodes.append(Node.leaf(ndoc.get("probs", ())))
            elif kind == "split":
                try:
                    nodes.append(
                        Node.split(
                            int(ndoc["feature"]),
                            float(ndoc["threshold"]),
                            int(ndoc["left"]),
                            int(ndoc["right"]),
                        )
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ModelFormatError(f"bad split node: {exc}", where) from exc
            else:
                raise ModelFormatError(f"unknown node kind {kind!r}", where)
        trees.append(Tree(nodes=tuple(nodes), root=int(tdoc["root"])))
    return Forest(
        trees=tuple(trees),
        n_classes=int(doc["n_classes"]),
        n_features=int(doc["n_features"]),
        feature_names=tuple(str(s) for s in names),
    )


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable (X, y) table with named numeric feature columns."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match the number of rows")
        if X.shape[0] and y.min() < 0:
            raise ValueError("class labels must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.feature_names:
            object.__setattr__(
                self, "feature_names", tuple(f"f{i}" for i in range(X.shape[1]))
            )
        elif len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names length must match the number of columns")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.y[rows], self.feature_names)

    def split(self, fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Shuffled (train, test) split with ``fraction`` of rows in train."""
        if not 0.0 < fraction < 1.0:
            raise ValueError("split fraction must be in (0, 1)")
        perm = np.random.default_rng(seed).permutation(self.n_rows)
        cut = int(round(self.n_rows * fraction))
        cut = min(max(cut, 1), self.n_rows - 1)
        return self.take(perm[:cut]), self.take(perm[cut:])

    @classmethod
    def from_csv(cls, source, label_column: str = "label") -> "Dataset":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, "r", newline="") as fh:
                text = fh.read()
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV") from None
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        names = tuple(h for i, h in enumerate(header) if i != label_idx)
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} columns")
            try:
                ys.append(int(float(row[label_idx])))
                xs.append([float(v) for i, v in enumerate(row) if i != label_idx])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
        if not xs:
            raise ValueError("CSV has no data rows")
        return cls(np.array(xs), np.array(ys), names)

    def to_csv(self, label_column: str = "label") -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(list(self.feature_names) + [label_column])
        for row, label in zip(self.X, self.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
        return out.getvalue()


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mins: np.ndarray
    maxs: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if not (self.mins <= self.means).all() or not (self.means <= self.maxs).all():
            raise ValueError("per-feature min <= mean <= max violated")
        if (self.stds < 0).any():
            raise ValueError("negative standard deviation")

    @property
    def ranges(self) -> np.ndarray:
        return self.maxs - self.mins


def feature_stats(dataset: Dataset) -> FeatureStats:
    """Componentwise min/max/mean/std of the dataset's feature columns."""
    if dataset.n_rows == 0:
        raise ValueError("empty dataset")
    X = dataset.X
    return FeatureStats(
        mins=X.min(axis=0),
        maxs=X.max(axis=0),
        means=X.mean(axis=0),
        stds=X.std(axis=0),
    )
