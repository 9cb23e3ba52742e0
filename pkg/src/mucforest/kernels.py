"""Forest traversal kernels.

Everything in this package bottoms out in one hot loop: route a point through
every tree and add up the leaf probability vectors. Two interchangeable
backends implement it, a numba-compiled one and a pure-numpy one. Set
``MUCFOREST_BACKEND=numpy`` (or ``=numba``) to force a backend; the default
picks numba when it is importable and falls back to numpy otherwise.

Both backends take the flattened node arrays built by
:mod:`mucforest.forest_model` (``feature`` is -1 on leaves) and return raw
per-class probability sums, not means; callers divide by the tree count when
they need Eq.-style averages. The argmax is unaffected either way.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_VAR = "MUCFOREST_BACKEND"


def _select_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_ENV_VAR} must be 'numba', 'numpy' or 'auto', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numpy"
    return "numba"


BACKEND = _select_backend()


def _class_sums_one_np(feature, threshold, left, right, probs, roots, x):
    total = np.zeros(probs.shape[1])
    for node in roots:
        f = feature[node]
        while f >= 0:
            if x[f] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            f = feature[node]
        total += probs[node]
    return total


def _class_sums_batch_np(feature, threshold, left, right, probs, roots, X):
    m = X.shape[0]
    total = np.zeros((m, probs.shape[1]))
    rows = np.arange(m)
    for root in roots:
        node = np.full(m, root, dtype=np.int32)
        live = feature[node] >= 0
        while live.any():
            idx = node[live]
            go_left = X[rows[live], feature[idx]] <= threshold[idx]
            node[live] = np.where(go_left, left[idx], right[idx])
            live[live] = feature[node[live]] >= 0
        total += probs[node]
    return total


if BACKEND == "numba":
    from numba import njit

    class_sums_one = njit(cache=True)(_class_sums_one_np)

    @njit(cache=True)
    def class_sums_batch(feature, threshold, left, right, probs, roots, X):
        out = np.zeros((X.shape[0], probs.shape[1]))
        for r in range(X.shape[0]):
            out[r] = class_sums_one(feature, threshold, left, right, probs, roots, X[r])
        return out

else:

    def class_sums_one(feature, threshold, left, right, probs, roots, x):
        return _class_sums_one_np(feature, threshold, left, right, probs, roots, x)

    class_sums_batch = _class_sums_batch_np
