import numpy as np
import pytest

from mucforest.forest_model import Dataset, Forest, Node, Tree
from mucforest.trainer import TrainParams, train_forest


def stump_forest(threshold=0.5, left_probs=(0.9, 0.1), right_probs=(0.2, 0.8),
                 n_features=1, feature=0) -> Forest:
    """One split, two leaves."""
    tree = Tree(
        nodes=(
            Node.leaf(left_probs),
            Node.leaf(right_probs),
            Node.split(feature, threshold, 0, 1),
        ),
        root=2,
    )
    return Forest(
        trees=(tree,),
        n_classes=len(left_probs),
        n_features=n_features,
        feature_names=tuple(f"f{i}" for i in range(n_features)),
    )


def make_synth(n=400, d=10, informative=3, seed=7, nuisance_scale=None) -> Dataset:
    """Uniform features; label = sum of the first `informative` exceeds half
    their count. With nuisance_scale, the remaining columns get that range."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    y = (X[:, :informative].sum(axis=1) > informative / 2).astype(int)
    if nuisance_scale is not None:
        X[:, informative:] *= nuisance_scale
    return Dataset(X, y, tuple(f"f{i}" for i in range(d)))


@pytest.fixture(scope="session")
def boundary_forest() -> Forest:
    """Crisp 1-D decision boundary at 0.5: class 0 iff x <= 0.5."""
    return stump_forest(0.5, (1.0, 0.0), (0.0, 1.0))


@pytest.fixture(scope="session")
def synth10() -> Dataset:
    return make_synth()


@pytest.fixture(scope="session")
def synth10_forest(synth10) -> Forest:
    return train_forest(synth10, TrainParams(n_trees=15, max_depth=5, rng_seed=0))


@pytest.fixture(scope="session")
def scaled10() -> Dataset:
    return make_synth(nuisance_scale=1000.0)


@pytest.fixture(scope="session")
def scaled10_forest(scaled10) -> Forest:
    return train_forest(scaled10, TrainParams(n_trees=15, max_depth=5, rng_seed=0))
