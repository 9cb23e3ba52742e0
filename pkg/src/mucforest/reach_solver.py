"""Exact reachability queries for forests over axis-aligned boxes.

:func:`decide_reachable` answers "does any point of this box make the forest
output (or avoid) a given class", sound and complete over the reals: it
depth-first searches the product of per-tree paths, narrowing a running
interval box with each branch (left edge intersects ``(-inf, threshold]`` on
the split feature, right edge intersects ``(threshold, +inf)``) and pruning
on empty intersections. An admissible vote bound (optimistic per-class
probability margin over the remaining trees, restricted to leaves reachable
under the query box) prunes hopeless subtrees without affecting results.

:func:`enumerate_cells` is the brute-force partner: it grids the box by every
split threshold and labels each cell with the forest's constant class there.
It exists to cross-check the solver and stays independent of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterator, Sequence

import numpy as np

from .exceptions import OracleTooLargeError
from .forest_model import Forest, Node, Tree, predict

INF = float("inf")

# Vote-bound slack: never prune when the optimistic margin is within this of
# zero, so float rounding in the bound can only cost pruning, not answers.
_PRUNE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Box:
    """Per-feature intervals with open/closed endpoint flags.

    Degenerate intervals ``[v, v]`` must be closed on both sides; an interval
    that is empty over the reals is rejected at construction.
    """

    lower: np.ndarray
    upper: np.ndarray
    lower_open: np.ndarray
    upper_open: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        lower_open = np.asarray(self.lower_open, dtype=bool)
        upper_open = np.asarray(self.upper_open, dtype=bool)
        if not lower.shape == upper.shape == lower_open.shape == upper_open.shape:
            raise ValueError("bound arrays must share one shape")
        if lower.ndim != 1:
            raise ValueError("bounds must be 1-D")
        if (lower > upper).any():
            raise ValueError("lower bound exceeds upper bound")
        degenerate = lower == upper
        if (degenerate & (lower_open | upper_open)).any():
            raise ValueError("degenerate interval with an open endpoint is empty")
        for arr, name in (
            (lower, "lower"),
            (upper, "upper"),
            (lower_open, "lower_open"),
            (upper_open, "upper_open"),
        ):
            object.__setattr__(self, name, arr)

    @property
    def n_features(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def unbounded(cls, d: int) -> "Box":
        return cls(
            np.full(d, -INF),
            np.full(d, INF),
            np.zeros(d, dtype=bool),
            np.zeros(d, dtype=bool),
        )

    @classmethod
    def closed(cls, lower, upper) -> "Box":
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        d = lower.shape[0]
        return cls(lower, upper, np.zeros(d, dtype=bool), np.zeros(d, dtype=bool))

    @classmethod
    def point(cls, x) -> "Box":
        x = np.asarray(x, dtype=np.float64)
        return cls.closed(x, x)

    def fix(self, i: int, value: float) -> "Box":
        """Copy of this box with feature ``i`` pinned to ``[value, value]``."""
        lower = self.lower.copy()
        upper = self.upper.copy()
        lo_open = self.lower_open.copy()
        up_open = self.upper_open.copy()
        lower[i] = upper[i] = value
        lo_open[i] = up_open[i] = False
        return Box(lower, upper, lo_open, up_open)

    def intersect(self, other: "Box") -> "Box | None":
        """Intersection box, or None when it is empty over the reals."""
        lower = np.maximum(self.lower, other.lower)
        upper = np.minimum(self.upper, other.upper)
        lo_open = np.where(
            self.lower > other.lower,
            self.lower_open,
            np.where(
                other.lower > self.lower,
                other.lower_open,
                self.lower_open | other.lower_open,
            ),
        )
        up_open = np.where(
            self.upper < other.upper,
            self.upper_open,
            np.where(
                other.upper < self.upper,
                other.upper_open,
                self.upper_open | other.upper_open,
            ),
        )
        if (lower > upper).any() or ((lower == upper) & (lo_open | up_open)).any():
            return None
        return Box(lower, upper, lo_open, up_open)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        above = np.where(self.lower_open, x > self.lower, x >= self.lower)
        below = np.where(self.upper_open, x < self.upper, x <= self.upper)
        return bool(above.all() and below.all())


@dataclass(frozen=True)
class Target:
    """Either "output is class c" or "output is any class but c"."""

    klass: int
    negate: bool

    @classmethod
    def is_class(cls, c: int) -> "Target":
        return cls(klass=c, negate=False)

    @classmethod
    def not_class(cls, c: int) -> "Target":
        return cls(klass=c, negate=True)

    def admits(self, predicted: int) -> bool:
        return (predicted != self.klass) if self.negate else (predicted == self.klass)


@dataclass(frozen=True, eq=False)
class SatResult:
    witness: np.ndarray | None

    @property
    def is_sat(self) -> bool:
        return self.witness is not None

    def __bool__(self) -> bool:
        return self.is_sat

    def __repr__(self) -> str:
        if self.witness is None:
            return "SatResult(unsat)"
        return f"SatResult(sat, witness={self.witness!r})"


UNSAT = SatResult(None)


def _interior_point(lo, up, lo_open, up_open, delta) -> float:
    """A representative double strictly inside the interval's open bounds."""
    if lo == -INF and up == INF:
        return 0.0
    if lo == -INF:
        v = up - 1.0
        return v if v < up else np.nextafter(up, -INF)
    if up == INF:
        v = lo + 1.0
        return v if v > lo else np.nextafter(lo, INF)
    if lo == up:
        return lo
    mid = 0.5 * (lo + up)
    step = min(delta, 0.25 * (up - lo))
    if lo_open and mid <= lo:
        mid = lo + step
    if up_open and mid >= up:
        mid = up - step
    if (lo_open and mid <= lo) or (up_open and mid >= up) or mid < lo or mid > up:
        mid = np.nextafter(lo, up)
    return mid


class _ReachSearch:
    """One depth-first product search; state is local to the query."""

    def __init__(self, forest: Forest, box: Box, target: Target):
        flat = forest.flat
        self.feature = flat.feature
        self.threshold = flat.threshold
        self.left = flat.left
        self.right = flat.right
        self.probs = flat.probs
        self.roots = flat.roots
        self.k = len(flat.roots)
        self.c = target.klass
        self.target = target
        self.gap = forest.threshold_gap
        self.lower = box.lower.copy()
        self.upper = box.upper.copy()
        self.lo_open = box.lower_open.copy()
        self.up_open = box.upper_open.copy()
        self.sums = [np.zeros(forest.n_classes)]
        self.witness: np.ndarray | None = None
        self.suffix = self._suffix_margins(forest.n_classes)

    def _reachable_leaf_margin(self, root: int, n_classes: int) -> np.ndarray:
        """Per class i, max over leaves reachable under the query box of the
        signed probability margin the target hopes for on the (i, c) pair."""
        best = np.full(n_classes, -INF)
        sign = 1.0 if self.target.negate else -1.0
        stack = [root]
        while stack:
            n = stack.pop()
            f = self.feature[n]
            if f < 0:
                margin = sign * (self.probs[n] - self.probs[n, self.c])
                np.maximum(best, margin, out=best)
                continue
            eta = self.threshold[n]
            lo, up = self.lower[f], self.upper[f]
            if lo < eta or (lo == eta and not self.lo_open[f]):
                stack.append(self.left[n])
            if up > eta:
                stack.append(self.right[n])
        return best

    def _suffix_margins(self, n_classes: int) -> np.ndarray:
        per_tree = np.zeros((self.k, n_classes))
        for t in range(self.k):
            per_tree[t] = self._reachable_leaf_margin(self.roots[t], n_classes)
        suffix = np.zeros((self.k + 1, n_classes))
        for t in range(self.k - 1, -1, -1):
            suffix[t] = suffix[t + 1] + per_tree[t]
        return suffix

    def _feasible(self, j: int) -> bool:
        s = self.sums[-1]
        c = self.c
        if self.target.negate:
            # Need some class i != c to end at least tied (i < c) or strictly
            # above (i > c); optimistically add the best remaining margins.
            bound = (s - s[c]) + self.suffix[j]
            bound[c] = -INF
            return bool((bound >= -_PRUNE_SLACK).any())
        bound = (s[c] - s) + self.suffix[j]
        bound[c] = INF
        return bool((bound >= -_PRUNE_SLACK).all())

    def run(self) -> SatResult:
        if not self._descend(0):
            return UNSAT
        return SatResult(self.witness)

    def _descend(self, j: int) -> bool:
        if j == self.k:
            predicted = int(np.argmax(self.sums[-1]))
            if self.target.admits(predicted):
                self.witness = self._extract_witness()
                return True
            return False
        if not self._feasible(j):
            return False
        return self._walk(j, int(self.roots[j]))

    def _walk(self, j: int, n: int) -> bool:
        f = self.feature[n]
        if f < 0:
            self.sums.append(self.sums[-1] + self.probs[n])
            hit = self._descend(j + 1)
            self.sums.pop()
            return hit
        eta = self.threshold[n]
        lo, up = self.lower[f], self.upper[f]
        if lo < eta or (lo == eta and not self.lo_open[f]):
            old_up, old_upo = self.upper[f], self.up_open[f]
            if eta < old_up:
                self.upper[f] = eta
                self.up_open[f] = False
            if self._walk(j, self.left[n]):
                return True
            self.upper[f] = old_up
            self.up_open[f] = old_upo
        if up > eta:
            old_lo, old_loo = self.lower[f], self.lo_open[f]
            if eta > old_lo:
                self.lower[f] = eta
                self.lo_open[f] = True
            elif eta == old_lo:
                self.lo_open[f] = True
            if self._walk(j, self.right[n]):
                return True
            self.lower[f] = old_lo
            self.lo_open[f] = old_loo
        return False

    def _extract_witness(self) -> np.ndarray:
        d = self.lower.shape[0]
        w = np.empty(d)
        for i in range(d):
            w[i] = _interior_point(
                self.lower[i],
                self.upper[i],
                self.lo_open[i],
                self.up_open[i],
                self.gap[i],
            )
        return w


def decide_reachable(forest: Forest, box: Box, target: Target) -> SatResult:
    """Sat with a witness point iff some point of ``box`` meets ``target``.

    Complete: never returns Unsat when a satisfying point exists. The witness
    lies strictly inside the box's open bounds and satisfies the target under
    :func:`mucforest.forest_model.predict`.
    """
    if box.n_features != forest.n_features:
        raise ValueError(
            f"box has {box.n_features} features, forest has {forest.n_features}"
        )
    if not 0 <= target.klass < forest.n_classes:
        raise ValueError(f"target class {target.klass} out of range")
    return _ReachSearch(forest, box, target).run()


def _feature_pieces(
    thresholds: np.ndarray, lo, up, lo_open, up_open
) -> list[tuple[float, float, bool, bool]]:
    cuts = [
        float(t)
        for t in thresholds
        if (t > lo or (t == lo and not lo_open)) and t < up
    ]
    pieces = []
    prev, prev_open = lo, lo_open
    for t in cuts:
        pieces.append((prev, t, prev_open, False))
        prev, prev_open = t, True
    pieces.append((prev, up, prev_open, up_open))
    return pieces


def enumerate_cells(
    forest: Forest, box: Box, max_cells: int = 100_000
) -> list[tuple[Box, int]]:
    """Partition ``box`` along every split threshold and classify each cell.

    The forest's prediction is constant on each cell, so the returned
    (cell, class) pairs fully describe its behavior on the box. Intended as a
    brute-force oracle for small forests; raises
    :class:`OracleTooLargeError` past ``max_cells``.
    """
    if box.n_features != forest.n_features:
        raise ValueError("box/forest feature count mismatch")
    flat = forest.flat
    per_feature = []
    total = 1
    for i in range(forest.n_features):
        thresholds = np.unique(flat.threshold[flat.feature == i])
        pieces = _feature_pieces(
            thresholds, box.lower[i], box.upper[i], box.lower_open[i], box.upper_open[i]
        )
        per_feature.append(pieces)
        total *= len(pieces)
        if total > max_cells:
            raise OracleTooLargeError(
                f"cell grid exceeds {max_cells} cells; shrink the forest or box"
            )
    gap = forest.threshold_gap
    cells = []
    for combo in product(*per_feature):
        lower = np.array([p[0] for p in combo])
        upper = np.array([p[1] for p in combo])
        lo_open = np.array([p[2] for p in combo])
        up_open = np.array([p[3] for p in combo])
        rep = np.array(
            [
                _interior_point(lower[i], upper[i], lo_open[i], up_open[i], gap[i])
                for i in range(forest.n_features)
            ]
        )
        cls, _ = predict(forest, rep)
        cells.append((Box(lower, upper, lo_open, up_open), cls))
    return cells


# ---------------------------------------------------------------------------
# Randomized solver/oracle self-test


def _random_tiny_forest(rng: np.random.Generator, max_features=4, max_trees=3,
                        max_depth=3) -> Forest:
    d = int(rng.integers(1, max_features + 1))
    n_classes = int(rng.integers(2, 4))
    grid = np.linspace(0.1, 0.9, 9)

    def draw_threshold() -> float:
        if rng.random() < 0.5:
            return float(rng.choice(grid))
        return float(np.round(rng.uniform(0.0, 1.0), 3))

    def grow(nodes: list[Node], depth: int) -> int:
        if depth >= max_depth or rng.random() < 0.3:
            raw = rng.random(n_classes) + 0.05
            nodes.append(Node.leaf(raw / raw.sum()))
            return len(nodes) - 1
        left = grow(nodes, depth + 1)
        right = grow(nodes, depth + 1)
        nodes.append(Node.split(int(rng.integers(d)), draw_threshold(), left, right))
        return len(nodes) - 1

    trees = []
    for _ in range(int(rng.integers(1, max_trees + 1))):
        nodes: list[Node] = []
        root = grow(nodes, 0)
        trees.append(Tree(nodes=tuple(nodes), root=root))
    return Forest(
        trees=tuple(trees),
        n_classes=n_classes,
        n_features=d,
        feature_names=tuple(f"f{i}" for i in range(d)),
    )


def _random_box(rng: np.random.Generator, d: int) -> Box:
    lower = np.full(d, -INF)
    upper = np.full(d, INF)
    grid = np.linspace(0.1, 0.9, 9)

    def value() -> float:
        if rng.random() < 0.4:
            return float(rng.choice(grid))
        return float(np.round(rng.uniform(-0.2, 1.2), 3))

    for i in range(d):
        shape = rng.random()
        if shape < 0.15:
            continue  # unbounded
        if shape < 0.30:
            lower[i] = value()
        elif shape < 0.45:
            upper[i] = value()
        elif shape < 0.60:
            lower[i] = upper[i] = value()
        else:
            a, b = value(), value()
            lower[i], upper[i] = min(a, b), max(a, b)
    return Box.closed(lower, upper)


def oracle_selftest(
    n_cases: int = 200, seed: int = 0, max_features: int = 4,
    max_trees: int = 3, max_depth: int = 3,
) -> tuple[int, int]:
    """Cross-check decide_reachable against enumerate_cells on random cases.

    Each case checks one membership-positive and one membership-negative
    target; a case agrees when both Sat/Unsat verdicts match the cell oracle
    and every Sat witness lies in the box and satisfies its target. Returns
    (agreements, checks).
    """
    rng = np.random.default_rng(seed)
    agree = total = 0
    for _ in range(n_cases):
        forest = _random_tiny_forest(rng, max_features, max_trees, max_depth)
        box = _random_box(rng, forest.n_features)
        cells = enumerate_cells(forest, box)
        for target in (
            Target.not_class(int(rng.integers(forest.n_classes))),
            Target.is_class(int(rng.integers(forest.n_classes))),
        ):
            total += 1
            expected = any(target.admits(cls) for _, cls in cells)
            result = decide_reachable(forest, box, target)
            ok = result.is_sat == expected
            if result.is_sat:
                cls, _ = predict(forest, result.witness)
                ok = ok and box.contains(result.witness) and target.admits(cls)
            agree += ok
    return agree, total
