"""Deletion-based minimal unsatisfiable core extraction.

The extractor is generic over an assumption oracle: any monotone
``is_unsat(subset) -> bool`` callback (adding assumptions can only preserve
unsatisfiability). Its main instantiation here explains a prediction: fix a
subset of features to the sample's values, leave the rest free, and ask the
reachability solver whether the prediction can still flip. The features that
survive deletion are the ones forcing the decision.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import NoCoreError
from .forest_model import Dataset, Forest
from .reach_solver import Box, Target, decide_reachable


@dataclass(frozen=True)
class AssumptionSet:
    """Assumption ids plus the unsatisfiability oracle deciding subsets."""

    ids: tuple[int, ...]
    is_unsat: Callable[[frozenset[int]], bool]


def extract_muc(assumptions: AssumptionSet) -> frozenset[int]:
    """One minimal unsatisfiable core of the assumption set.

    Deletion-based: walk the ids in ascending order, drop each assumption
    permanently when the rest stays unsatisfiable without it. Minimality of
    the result only needs the oracle's monotonicity. Costs at most
    ``len(ids) + 1`` oracle calls. Raises NoCoreError when the full set is
    already satisfiable.
    """
    current = set(assumptions.ids)
    if not assumptions.is_unsat(frozenset(current)):
        raise NoCoreError("full assumption set is satisfiable; no core exists")
    for e in sorted(assumptions.ids):
        trial = current - {e}
        if assumptions.is_unsat(frozenset(trial)):
            current = trial
    return frozenset(current)


def _fixing_box(free_domain: Box, x: np.ndarray, fixed: Iterable[int]) -> Box:
    lower = free_domain.lower.copy()
    upper = free_domain.upper.copy()
    lo_open = free_domain.lower_open.copy()
    up_open = free_domain.upper_open.copy()
    idx = list(fixed)
    lower[idx] = x[idx]
    upper[idx] = x[idx]
    lo_open[idx] = False
    up_open[idx] = False
    return Box(lower, upper, lo_open, up_open)


def local_explanation(
    forest: Forest, x, y: int, free_domain: Box | None = None
) -> frozenset[int]:
    """Minimal feature set whose values force the forest to predict ``y``.

    Fixing exactly the returned features to their values in ``x`` (others
    free over ``free_domain``, unbounded by default) makes predicting any
    class other than ``y`` unreachable, and every returned feature is
    necessary for that. Raises NoCoreError when ``x`` is not predicted ``y``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = forest.n_features
    if free_domain is None:
        free_domain = Box.unbounded(d)
    target = Target.not_class(y)

    def is_unsat(subset: frozenset[int]) -> bool:
        box = _fixing_box(free_domain, x, subset)
        return not decide_reachable(forest, box, target)

    return extract_muc(AssumptionSet(ids=tuple(range(d)), is_unsat=is_unsat))


@dataclass(frozen=True)
class Explanation:
    """Per-sample explanation record; ``core`` is None for misclassified rows."""

    sample: int
    label: int
    core: frozenset[int] | None
    time_ms: int

    def to_record(self, feature_names: Sequence[str]) -> dict:
        core = sorted(self.core) if self.core is not None else None
        return {
            "sample": self.sample,
            "label": self.label,
            "core": core,
            "core_names": [feature_names[i] for i in core] if core is not None else None,
            "time_ms": self.time_ms,
        }


def explain_row(
    forest: Forest, dataset: Dataset, row: int, free_domain: Box | None = None
) -> Explanation:
    x = dataset.X[row]
    y = int(dataset.y[row])
    start = time.perf_counter()
    try:
        core = local_explanation(forest, x, y, free_domain)
    except NoCoreError:
        core = None
    elapsed = int(round((time.perf_counter() - start) * 1000))
    return Explanation(sample=row, label=y, core=core, time_ms=elapsed)


def explain_dataset(
    forest: Forest,
    dataset: Dataset,
    rows: Sequence[int] | None = None,
    free_domain: Box | None = None,
) -> list[Explanation]:
    """Explanations for the given rows (all rows by default), computed once
    per sample so downstream consumers can re-read cores freely."""
    if rows is None:
        rows = range(dataset.n_rows)
    return [explain_row(forest, dataset, int(r), free_domain) for r in rows]


def feature_utilization(
    cores: Sequence[frozenset[int]], n_features: int
) -> tuple[int, float, float]:
    """(mode of core size, mean core size, mean / n_features)."""
    if not cores:
        raise ValueError("no cores given")
    sizes = [len(c) for c in cores]
    counts = Counter(sizes)
    mode = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    avg = sum(sizes) / len(sizes)
    return mode, avg, avg / n_features
