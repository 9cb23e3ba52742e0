import numpy as np
import pytest

from mucforest.exceptions import OracleTooLargeError
from mucforest.forest_model import Forest, Node, Tree, predict
from mucforest.reach_solver import (
    Box,
    Target,
    _random_box,
    _random_tiny_forest,
    decide_reachable,
    enumerate_cells,
    oracle_selftest,
)

from conftest import stump_forest

INF = float("inf")


class TestBox:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            Box.closed([1.0], [0.0])

    def test_rejects_open_degenerate(self):
        with pytest.raises(ValueError):
            Box([1.0], [1.0], [True], [False])

    def test_intersect_merges_flags(self):
        a = Box([0.0], [1.0], [True], [False])
        b = Box([0.0], [1.0], [False], [True])
        both = a.intersect(b)
        assert both.lower_open[0] and both.upper_open[0]

    def test_intersect_empty(self):
        a = Box.closed([0.0], [0.4])
        b = Box.closed([0.5], [1.0])
        assert a.intersect(b) is None
        half_open = Box([0.5], [1.0], [True], [False])
        point = Box.point([0.5])
        assert half_open.intersect(point) is None

    def test_intersect_is_a_box(self):
        a = Box.closed([0.0, -1.0], [1.0, 2.0])
        b = Box.closed([0.25, 0.0], [0.75, 5.0])
        both = a.intersect(b)
        assert both.lower.tolist() == [0.25, 0.0]
        assert both.upper.tolist() == [0.75, 2.0]

    def test_contains_respects_open_flags(self):
        box = Box([0.0], [1.0], [True], [False])
        assert not box.contains([0.0])
        assert box.contains([1.0])
        assert box.contains([0.5])

    def test_fix_pins_feature(self):
        box = Box.unbounded(2).fix(1, 0.3)
        assert box.lower[1] == box.upper[1] == 0.3
        assert box.lower[0] == -INF


class TestDecideReachable:
    def test_flip_reachable_above_threshold(self):
        forest = stump_forest()
        result = decide_reachable(forest, Box.closed([0.0], [1.0]), Target.not_class(0))
        assert result.is_sat
        assert result.witness[0] > 0.5
        assert predict(forest, result.witness)[0] == 1

    def test_flip_unreachable_below_threshold(self):
        forest = stump_forest()
        assert not decide_reachable(forest, Box.closed([0.0], [0.5]), Target.not_class(0))

    def test_point_box_is_predict(self):
        forest = stump_forest()
        result = decide_reachable(forest, Box.point([0.3]), Target.is_class(0))
        assert result.is_sat
        assert result.witness.tolist() == [0.3]

    def test_feature_count_checked(self):
        with pytest.raises(ValueError):
            decide_reachable(stump_forest(), Box.unbounded(2), Target.is_class(0))

    def test_class_range_checked(self):
        with pytest.raises(ValueError):
            decide_reachable(stump_forest(), Box.unbounded(1), Target.is_class(5))

    def test_point_duality_with_predict(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            forest = _random_tiny_forest(rng)
            x = rng.uniform(-0.2, 1.2, forest.n_features)
            predicted = predict(forest, x)[0]
            box = Box.point(x)
            assert decide_reachable(forest, box, Target.is_class(predicted)).is_sat
            assert not decide_reachable(forest, box, Target.not_class(predicted))
            for other in range(forest.n_classes):
                if other != predicted:
                    assert not decide_reachable(forest, box, Target.is_class(other))

    def test_monotone_in_box(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            forest = _random_tiny_forest(rng)
            d = forest.n_features
            inner_lo = rng.uniform(0.0, 0.5, d)
            inner_hi = inner_lo + rng.uniform(0.0, 0.4, d)
            small = Box.closed(inner_lo, inner_hi)
            big = Box.closed(inner_lo - 0.3, inner_hi + 0.3)
            target = Target.not_class(int(rng.integers(forest.n_classes)))
            if decide_reachable(forest, small, target).is_sat:
                assert decide_reachable(forest, big, target).is_sat

    def test_open_bounds_respected_by_witness(self):
        forest = stump_forest()  # split at 0.5
        box = Box([0.5], [0.6], [True], [True])
        result = decide_reachable(forest, box, Target.not_class(0))
        assert result.is_sat
        assert 0.5 < result.witness[0] < 0.6
        # the closed complement on the left of the threshold stays class 0
        closed_left = Box([0.4], [0.5], [False], [False])
        assert not decide_reachable(forest, closed_left, Target.not_class(0))


class TestEnumerateCells:
    def test_single_split_two_cells(self):
        cells = enumerate_cells(stump_forest(), Box.unbounded(1))
        assert len(cells) == 2
        by_class = {cls: cell for cell, cls in cells}
        assert by_class[0].upper[0] == 0.5 and not by_class[0].upper_open[0]
        assert by_class[1].lower[0] == 0.5 and by_class[1].lower_open[0]

    def test_two_thresholds_three_cells(self):
        t1 = Tree(
            nodes=(Node.leaf([1, 0]), Node.leaf([0, 1]), Node.split(0, 0.3, 0, 1)), root=2
        )
        t2 = Tree(
            nodes=(Node.leaf([1, 0]), Node.leaf([0, 1]), Node.split(0, 0.7, 0, 1)), root=2
        )
        forest = Forest(trees=(t1, t2), n_classes=2, n_features=1)
        assert len(enumerate_cells(forest, Box.unbounded(1))) == 3

    def test_cell_classes_match_predict_at_interior_points(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            forest = _random_tiny_forest(rng)
            box = _random_box(rng, forest.n_features)
            for cell, cls in enumerate_cells(forest, box):
                lo = np.where(np.isfinite(cell.lower), cell.lower, cell.upper - 2.0)
                hi = np.where(np.isfinite(cell.upper), cell.upper, cell.lower + 2.0)
                lo = np.where(np.isfinite(lo), lo, -1.0)
                hi = np.where(np.isfinite(hi), hi, 1.0)
                mid = np.where(lo == hi, lo, 0.5 * (lo + hi))
                assert cell.contains(mid)
                assert predict(forest, mid)[0] == cls

    def test_cells_cover_box(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            forest = _random_tiny_forest(rng)
            box = _random_box(rng, forest.n_features)
            cells = enumerate_cells(forest, box)
            for _ in range(20):
                lo = np.where(np.isfinite(box.lower), box.lower, -2.0)
                hi = np.where(np.isfinite(box.upper), box.upper, 2.0)
                x = rng.uniform(lo, hi)
                if not box.contains(x):
                    continue
                assert sum(cell.contains(x) for cell, _ in cells) == 1

    def test_cell_budget(self):
        forest = stump_forest()
        with pytest.raises(OracleTooLargeError):
            enumerate_cells(forest, Box.unbounded(1), max_cells=1)


def test_solver_agrees_with_cell_oracle():
    agree, total = oracle_selftest(n_cases=60, seed=123)
    assert agree == total
