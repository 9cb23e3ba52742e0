"""Shapley-style feature importance driven by per-sample unsat cores.

The coalition worth of a feature subset S counts, with sign, the samples
whose core contains S: +1 when the sample's label is the class of interest,
-1 otherwise, 0 when S is not contained. Exact values enumerate every
subset; the sampled estimator accumulates M uniformly drawn weighted
marginals per feature without normalization, so its magnitudes scale with M
while rankings match the exact ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Iterable, Sequence

import numpy as np

from .forest_model import Dataset
from .muc_core import Explanation
from .trainer import TrainParams, evaluate_accuracy, train_forest

EXACT_FEATURE_LIMIT = 20


def _as_mask(features: Iterable[int]) -> int:
    mask = 0
    for f in features:
        mask |= 1 << f
    return mask


@dataclass(frozen=True)
class MucTable:
    """Cores and labels of explained samples, for a class of interest."""

    masks: tuple[int, ...]
    signs: tuple[int, ...]
    klass: int
    n_features: int
    skipped: tuple[int, ...] = ()

    @classmethod
    def from_cores(
        cls,
        cores: Sequence[frozenset[int]],
        labels: Sequence[int],
        klass: int,
        n_features: int,
        skipped: Sequence[int] = (),
    ) -> "MucTable":
        if len(cores) != len(labels):
            raise ValueError("cores and labels must align")
        return cls(
            masks=tuple(_as_mask(c) for c in cores),
            signs=tuple(1 if y == klass else -1 for y in labels),
            klass=klass,
            n_features=n_features,
            skipped=tuple(skipped),
        )

    @classmethod
    def from_explanations(
        cls, explanations: Sequence[Explanation], klass: int, n_features: int
    ) -> "MucTable":
        """Build from explain_dataset output; rows without a core (the
        misclassified ones) are excluded and recorded in ``skipped``."""
        kept = [e for e in explanations if e.core is not None]
        return cls.from_cores(
            cores=[e.core for e in kept],
            labels=[e.label for e in kept],
            klass=klass,
            n_features=n_features,
            skipped=[e.sample for e in explanations if e.core is None],
        )

    @property
    def n_rows(self) -> int:
        return len(self.masks)


def worth(S: Iterable[int] | int, table: MucTable) -> int:
    """Signed count of samples whose core contains S."""
    mask = S if isinstance(S, int) else _as_mask(S)
    return sum(
        sign for core, sign in zip(table.masks, table.signs) if mask & ~core == 0
    )


def shapley_weight(s: int, f: int) -> Fraction:
    """Coalition weight s!(f-s-1)!/f! as an exact rational."""
    if not 0 <= s <= f - 1:
        raise ValueError(f"need 0 <= s <= f-1, got s={s}, f={f}")
    return Fraction(factorial(s) * factorial(f - s - 1), factorial(f))


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    phi: np.ndarray
    mode: str  # "exact" | "sampled"
    M: int | None = None
    seed: int | None = None

    def ranking(self) -> np.ndarray:
        """Feature indices by descending |phi|, ties by lower index."""
        return np.argsort(-np.abs(self.phi), kind="stable")


def _subset_masks(members: Sequence[int]):
    for bits in range(1 << len(members)):
        mask = 0
        b = bits
        while b:
            low = b & -b
            mask |= 1 << members[low.bit_length() - 1]
            b ^= low
        yield mask


def m_shapley(
    table: MucTable,
    mode: str = "exact",
    M: int | None = None,
    seed: int = 0,
    exact_limit: int = EXACT_FEATURE_LIMIT,
) -> ImportanceVector:
    """Per-feature importance for the table's class of interest.

    exact: full enumeration of Shapley marginals (feature count capped at
    ``exact_limit``). sampled: M uniformly random subsets per feature,
    deterministic per seed, magnitudes unnormalized.
    """
    if table.n_rows == 0:
        raise ValueError("empty table")
    f = table.n_features
    phi = np.zeros(f)
    if mode == "exact":
        if f > exact_limit:
            raise ValueError(
                f"exact mode supports at most {exact_limit} features, got {f}"
            )
        weights = [float(shapley_weight(s, f)) for s in range(f)]
        for i in range(f):
            others = [e for e in range(f) if e != i]
            bit = 1 << i
            acc = 0.0
            for mask in _subset_masks(others):
                acc += weights[mask.bit_count()] * (
                    worth(mask | bit, table) - worth(mask, table)
                )
            phi[i] = acc
        return ImportanceVector(phi=phi, mode="exact")
    if mode == "sampled":
        if M is None or M < 1:
            raise ValueError("sampled mode needs M >= 1")
        weights = [float(shapley_weight(s, f)) for s in range(f)]
        streams = np.random.SeedSequence(seed).spawn(f)
        for i in range(f):
            rng = np.random.default_rng(streams[i])
            others = [e for e in range(f) if e != i]
            bit = 1 << i
            acc = 0.0
            for _ in range(M):
                picks = np.nonzero(rng.random(f - 1) < 0.5)[0]
                mask = 0
                for p in picks:
                    mask |= 1 << others[p]
                acc += weights[mask.bit_count()] * (
                    worth(mask | bit, table) - worth(mask, table)
                )
            phi[i] = acc
        return ImportanceVector(phi=phi, mode="sampled", M=M, seed=seed)
    raise ValueError(f"unknown mode {mode!r}")


def imputation_eval(
    dataset: Dataset,
    ranking: Sequence[int],
    Ns: Sequence[int],
    shuffles: int,
    params: TrainParams,
    split: float = 0.8,
) -> list[tuple[int, float]]:
    """Accuracy after mean-imputing the top-N ranked features, per N.

    For each shuffle the dataset is re-split; the top-N features (by the
    given ranking) are replaced with the training split's per-feature means
    in both splits, a fresh forest is trained on the modified training rows,
    and test accuracy is recorded. Returns (N, accuracy averaged over
    shuffles) pairs.
    """
    d = dataset.n_features
    if sorted(ranking) != list(range(d)):
        raise ValueError("ranking must be a permutation of all features")
    if any(n < 0 or n > d for n in Ns):
        raise ValueError(f"each N must lie in [0, {d}]")
    if shuffles < 1:
        raise ValueError("need at least one shuffle")
    ranking = np.asarray(ranking, dtype=np.int64)
    totals = np.zeros(len(Ns))
    root = np.random.SeedSequence(params.rng_seed)
    for child in root.spawn(shuffles):
        split_seed, train_seed = (int(s) for s in child.generate_state(2))
        train, test = dataset.split(split, seed=split_seed)
        means = train.X.mean(axis=0)
        for pos, n_imputed in enumerate(Ns):
            cols = ranking[:n_imputed]
            Xtr = train.X.copy()
            Xte = test.X.copy()
            Xtr[:, cols] = means[cols]
            Xte[:, cols] = means[cols]
            forest = train_forest(
                Dataset(Xtr, train.y, dataset.feature_names),
                params.with_seed(train_seed),
            )
            totals[pos] += evaluate_accuracy(
                forest, Dataset(Xte, test.y, dataset.feature_names)
            )
    return [(int(n), float(t / shuffles)) for n, t in zip(Ns, totals)]
