import numpy as np
import pytest

from mucforest.exceptions import DirectionError, NoCandidateError, NoRegionError
from mucforest.forest_model import Dataset, Forest, Node, Tree, feature_stats, predict
from mucforest.muc_attack import (
    AttackConfig,
    attack,
    expand_adversarial_region,
    fine_grained_binary_search,
    is_adversarial,
    mean_l2_distance,
    region_bounds,
    select_initial_direction,
    zero_order_optimize,
)
from mucforest.reach_solver import Box, Target, decide_reachable

from conftest import make_synth, stump_forest


def boundary_cfg(**overrides) -> AttackConfig:
    defaults = dict(
        kappa=np.array([0.1]),
        bounds=Box.closed([0.0], [1.0]),
        mu=np.array([1.0]),
        epsilon=1e-4,
        seed=0,
    )
    defaults.update(overrides)
    return AttackConfig(**defaults)


@pytest.fixture(scope="module")
def crisp():
    return stump_forest(0.5, (1.0, 0.0), (0.0, 1.0))


class TestExpandRegion:
    def test_steps_until_threshold_crossed(self, crisp):
        cfg = boundary_cfg()
        tau = expand_adversarial_region(crisp, [0.3], 0, cfg)
        assert tau.tolist() == [pytest.approx(0.3)]
        # per-iteration frontier: the previous radius still failed to cross
        for k in range(1, 4):
            radius = k * 0.1
            box = Box.closed([max(0.3 - radius, 0.0)], [min(0.3 + radius, 1.0)])
            sat = bool(decide_reachable(crisp, box, Target.not_class(0)))
            assert sat == (0.3 + radius > 0.5)

    def test_already_adversarial_needs_no_expansion(self, crisp):
        tau = expand_adversarial_region(crisp, [0.3], 1, cfg=boundary_cfg())
        assert tau.tolist() == [0.0]

    def test_immutable_deciding_feature_blocks(self, crisp):
        cfg = boundary_cfg(immutable=frozenset({0}), kappa=np.array([1.0]))
        with pytest.raises(NoRegionError, match="immutable"):
            expand_adversarial_region(crisp, [0.3], 0, cfg)

    def test_saturated_bounds_block(self, crisp):
        cfg = boundary_cfg(bounds=Box.closed([0.0], [0.5]))
        with pytest.raises(NoRegionError, match="saturated|anywhere"):
            expand_adversarial_region(crisp, [0.3], 0, cfg)

    def test_region_is_frontier(self, scaled10, scaled10_forest):
        stats = feature_stats(scaled10)
        cfg = AttackConfig.from_stats(stats, seed=3)
        row = next(
            i for i in range(scaled10.n_rows)
            if predict(scaled10_forest, scaled10.X[i])[0] == scaled10.y[i]
        )
        x, y = scaled10.X[row], int(scaled10.y[row])
        tau = expand_adversarial_region(scaled10_forest, x, y, cfg)
        floor, ceil = region_bounds(x, tau, cfg.bounds)
        target = Target.not_class(y)
        assert decide_reachable(scaled10_forest, Box.closed(floor, ceil), target)
        if tau.any():
            shrunk = np.clip(tau - cfg.kappa, 0.0, None)
            f2, c2 = region_bounds(x, shrunk, cfg.bounds)
            assert not decide_reachable(scaled10_forest, Box.closed(f2, c2), target)

    def test_untouched_features_stay_zero(self, scaled10, scaled10_forest):
        stats = feature_stats(scaled10)
        immutable = frozenset({5})
        cfg = AttackConfig.from_stats(stats, immutable=immutable, seed=3)
        row = next(
            i for i in range(scaled10.n_rows)
            if predict(scaled10_forest, scaled10.X[i])[0] == scaled10.y[i]
        )
        x, y = scaled10.X[row], int(scaled10.y[row])
        tau = expand_adversarial_region(scaled10_forest, x, y, cfg)
        assert tau[5] == 0.0


class TestIsAdversarial:
    def test_original_sample(self, crisp):
        assert not is_adversarial(crisp, [0.3], 0)

    def test_flipped_point(self, crisp):
        assert is_adversarial(crisp, [0.7], 0)

    def test_agrees_with_predict(self, synth10, synth10_forest):
        rng = np.random.default_rng(8)
        for _ in range(100):
            x = rng.uniform(0, 1, synth10.n_features)
            y = int(rng.integers(2))
            assert is_adversarial(synth10_forest, x, y) == (
                predict(synth10_forest, x)[0] != y
            )


class TestFineGrainedBinarySearch:
    def test_analytic_boundary(self, crisp):
        cfg = boundary_cfg()
        lam = fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), 0.6, cfg)
        assert abs(lam - 0.2) <= cfg.epsilon
        # bracket: the adversarial side is kept, the inner side is not
        assert is_adversarial(crisp, [0.3 + lam], 0)
        assert not is_adversarial(crisp, [0.3 + lam - cfg.epsilon], 0)

    def test_hand_simulated_halving(self, crisp):
        # alpha=0.5, v0=0.6: probes 0.6, 0.3 (both adversarial), 0.15 (not);
        # a stopping tolerance wider than the bracket returns its upper end
        cfg = boundary_cfg(alpha=0.5, epsilon=0.16)
        lam = fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), 0.6, cfg)
        assert lam == pytest.approx(0.3)
        cfg = boundary_cfg(alpha=0.5, epsilon=1e-4)
        lam = fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), 0.6, cfg)
        assert abs(lam - 0.2) <= 1e-4

    def test_start_near_boundary_returns_start(self, crisp):
        cfg = boundary_cfg()
        v0 = 0.2 + 5e-5
        lam = fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), v0, cfg)
        assert lam <= v0
        assert abs(lam - v0) <= cfg.alpha * v0 + cfg.epsilon

    def test_non_adversarial_start_raises(self, crisp):
        with pytest.raises(DirectionError):
            fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), 0.1, boundary_cfg())

    def test_zero_direction_raises(self, crisp):
        with pytest.raises(DirectionError):
            fine_grained_binary_search(crisp, [0.3], 0, np.array([0.0]), 0.5, boundary_cfg())

    def test_direction_is_normalized(self, crisp):
        cfg = boundary_cfg()
        lam_unit = fine_grained_binary_search(crisp, [0.3], 0, np.array([1.0]), 0.6, cfg)
        lam_scaled = fine_grained_binary_search(crisp, [0.3], 0, np.array([7.0]), 0.6, cfg)
        assert lam_unit == lam_scaled


class TestSelectInitialDirection:
    def test_single_cell_region_points_into_it(self, crisp):
        cfg = boundary_cfg(n_candidates=64)
        rng = np.random.default_rng(1)
        theta, lam = select_initial_direction(
            crisp, [0.3], 0, np.array([0.0]), np.array([0.7]), cfg, rng
        )
        assert theta[0] > 0
        assert abs(lam - 0.2) <= cfg.epsilon

    def test_pool_mode_min_contract(self, crisp):
        cfg = boundary_cfg()
        pool = np.array([[0.9], [0.6], [0.55]])
        rng = np.random.default_rng(2)
        theta, lam = select_initial_direction(
            crisp, [0.3], 0, None, None, cfg, rng, pool=pool
        )
        for cand in pool:
            theta_c = cand - np.array([0.3])
            lam_c = fine_grained_binary_search(
                crisp, [0.3], 0, theta_c, float(np.linalg.norm(theta_c)), cfg
            )
            assert lam <= lam_c + 1e-12

    def test_pool_without_adversarial_rows_raises(self, crisp):
        cfg = boundary_cfg()
        rng = np.random.default_rng(3)
        with pytest.raises(NoCandidateError):
            select_initial_direction(
                crisp, [0.3], 0, None, None, cfg, rng, pool=np.array([[0.1], [0.2]])
            )

    def test_unsatisfiable_sampling_raises_without_fallback(self, crisp):
        cfg = boundary_cfg(n_candidates=4)
        rng = np.random.default_rng(4)
        with pytest.raises(NoCandidateError):
            select_initial_direction(
                crisp, [0.3], 0, np.array([0.0]), np.array([0.5]), cfg, rng
            )

    def test_fallback_candidate_rescues(self, crisp):
        cfg = boundary_cfg(n_candidates=4)
        rng = np.random.default_rng(4)
        theta, lam = select_initial_direction(
            crisp, [0.3], 0, np.array([0.0]), np.array([0.5]), cfg, rng,
            fallback=np.array([0.8]),
        )
        assert theta[0] == pytest.approx(0.5)


class TestZeroOrderOptimize:
    def test_t_zero_returns_initial(self, crisp):
        cfg = boundary_cfg(T=0)
        theta0 = np.array([1.0])
        result = zero_order_optimize(crisp, [0.3], 0, theta0, cfg, lambda0=0.25)
        assert result.trace == [0.25]
        assert (result.theta_final == theta0).all()
        assert result.distance == pytest.approx(0.25)

    def test_1d_converges_to_boundary(self, crisp):
        cfg = boundary_cfg(T=25)
        result = zero_order_optimize(crisp, [0.3], 0, np.array([1.0]), cfg)
        assert abs(result.distance - 0.2) <= 0.01
        assert is_adversarial(crisp, result.x_adv, 0)

    def test_2d_halfplane_finds_perpendicular(self):
        # class flips iff f0 > 0.5, f1 irrelevant; nearest point from
        # (0.3, 0.0) is at distance 0.2 straight along f0
        forest = stump_forest(0.5, (1.0, 0.0), (0.0, 1.0), n_features=2, feature=0)
        cfg = AttackConfig(
            kappa=np.array([0.1, 0.1]),
            bounds=Box.closed([-5.0, -5.0], [5.0, 5.0]),
            mu=np.array([1.0, 1.0]),
            epsilon=1e-5,
            T=150,
            seed=7,
        )
        result = zero_order_optimize(forest, [0.3, 0.0], 0, np.array([1.0, 1.0]), cfg)
        assert result.distance <= 0.2 * 1.10
        assert is_adversarial(forest, result.x_adv, 0)

    def test_trace_non_increasing(self, scaled10, scaled10_forest):
        stats = feature_stats(scaled10)
        cfg = AttackConfig.from_stats(stats, T=30, n_candidates=100, seed=5)
        row = next(
            i for i in range(scaled10.n_rows)
            if predict(scaled10_forest, scaled10.X[i])[0] == scaled10.y[i]
        )
        x, y = scaled10.X[row], int(scaled10.y[row])
        result = attack(scaled10_forest, x, y, cfg, mode="muc", dataset=scaled10)
        assert len(result.trace) == cfg.T + 1
        assert all(b <= a + 1e-12 for a, b in zip(result.trace, result.trace[1:]))
        assert result.distance <= result.trace[0] + 1e-12


class TestAttack:
    def test_requires_correct_prediction(self, crisp):
        with pytest.raises(ValueError):
            attack(crisp, [0.3], 1, boundary_cfg())

    def test_muc_mode_end_to_end(self, crisp):
        cfg = boundary_cfg(T=10, n_candidates=32)
        result = attack(crisp, [0.3], 0, cfg, mode="muc")
        assert result.mode == "muc"
        assert is_adversarial(crisp, result.x_adv, 0)
        assert result.tau.tolist() == [pytest.approx(0.3)]
        assert result.distance <= result.trace[0] + 1e-12

    def test_baseline_mode_uses_dataset_pool(self, crisp):
        ds = Dataset(np.array([[0.2], [0.8], [0.9], [0.4]]), np.array([0, 1, 1, 0]))
        cfg = boundary_cfg(T=5, n_candidates=10)
        result = attack(crisp, [0.3], 0, cfg, mode="baseline", dataset=ds)
        assert result.mode == "baseline"
        assert result.tau is None
        assert is_adversarial(crisp, result.x_adv, 0)

    def test_baseline_needs_dataset(self, crisp):
        with pytest.raises(ValueError):
            attack(crisp, [0.3], 0, boundary_cfg(), mode="baseline")

    def test_baseline_without_other_class_rows(self, crisp):
        ds = Dataset(np.array([[0.1], [0.2]]), np.array([0, 0]))
        with pytest.raises(NoCandidateError):
            attack(crisp, [0.3], 0, boundary_cfg(), mode="baseline", dataset=ds)

    def test_unknown_mode(self, crisp):
        with pytest.raises(ValueError):
            attack(crisp, [0.3], 0, boundary_cfg(), mode="gray-box")

    def test_record_schema(self, crisp):
        cfg = boundary_cfg(T=3, n_candidates=16)
        record = attack(crisp, [0.3], 0, cfg, mode="muc").to_record(sample=7)
        assert set(record) == {
            "sample", "mode", "x_org", "x_adv", "distance",
            "search_time_ms", "opt_time_ms", "tau", "iterations",
        }
        assert record["sample"] == 7
        assert record["iterations"] == 3

    def test_seed_and_sample_index_reproduce(self, crisp):
        cfg = boundary_cfg(T=5, n_candidates=16)
        a = attack(crisp, [0.3], 0, cfg, mode="muc", sample_index=4)
        b = attack(crisp, [0.3], 0, cfg, mode="muc", sample_index=4)
        assert a.distance == b.distance
        assert (a.x_adv == b.x_adv).all()

    def test_frozen_features_never_move_in_muc_mode(self, scaled10, scaled10_forest):
        stats = feature_stats(scaled10)
        cfg = AttackConfig.from_stats(stats, T=15, n_candidates=100, seed=2)
        row = next(
            i for i in range(scaled10.n_rows)
            if predict(scaled10_forest, scaled10.X[i])[0] == scaled10.y[i]
        )
        x, y = scaled10.X[row], int(scaled10.y[row])
        result = attack(scaled10_forest, x, y, cfg, mode="muc", dataset=scaled10)
        untouched = np.nonzero(result.tau == 0.0)[0]
        assert (result.x_adv[untouched] == x[untouched]).all()

    def test_paired_two_feature_quality(self):
        # two features, one informative: guided distances should not lose
        # to the baseline on average
        ds = make_synth(n=200, d=2, informative=1, seed=33, nuisance_scale=100.0)
        from mucforest.trainer import TrainParams, train_forest

        forest = train_forest(ds, TrainParams(n_trees=7, max_depth=4, rng_seed=1))
        cfg = AttackConfig.from_stats(feature_stats(ds), T=15, n_candidates=200, seed=9)
        pairs_muc, pairs_base = [], []
        done = 0
        for i in range(ds.n_rows):
            x, y = ds.X[i], int(ds.y[i])
            if predict(forest, x)[0] != y:
                continue
            r_muc = attack(forest, x, y, cfg, mode="muc", dataset=ds, sample_index=i)
            r_base = attack(forest, x, y, cfg, mode="baseline", dataset=ds, sample_index=i)
            assert is_adversarial(forest, r_muc.x_adv, y)
            assert is_adversarial(forest, r_base.x_adv, y)
            pairs_muc.append((x, r_muc.x_adv))
            pairs_base.append((x, r_base.x_adv))
            done += 1
            if done >= 10:
                break
        assert mean_l2_distance(pairs_muc) <= mean_l2_distance(pairs_base)


class TestMeanL2:
    def test_single_pair(self):
        assert mean_l2_distance([(np.array([0.0]), np.array([3.0]))]) == 3.0

    def test_two_pairs(self):
        pairs = [
            (np.array([0.0]), np.array([1.0])),
            (np.array([0.0]), np.array([3.0])),
        ]
        assert mean_l2_distance(pairs) == 2.0

    def test_matches_recomputation(self):
        rng = np.random.default_rng(12)
        pairs = [(rng.normal(size=4), rng.normal(size=4)) for _ in range(50)]
        expect = sum(
            float(np.sqrt(((a - b) ** 2).sum())) for a, b in pairs
        ) / len(pairs)
        assert mean_l2_distance(pairs) == pytest.approx(expect, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_l2_distance([])
