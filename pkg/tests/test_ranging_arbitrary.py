import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import l_shaped_headings, oracle_local_ranges
from rttpdr.geometry import accumulate_directions
from rttpdr.ranging_arbitrary import (
    GammaScan,
    GammaSearchConfig,
    _PairBatch,
    build_gamma_system,
    direction_projection,
    initial_positions_batch,
    radius_consistency_cost,
    search_gamma,
    search_gamma_batch,
    solve_gamma_system,
    solve_initial_position,
)
from rttpdr.ranging_linear import ReferenceStepPair
from rttpdr.types import (
    InfeasibleError,
    RankDeficientError,
    TooFewStepsError,
    UnderdeterminedSystemError,
)

PAIR = ReferenceStepPair(2, 6)


class TestDirectionProjection:
    def test_straight_walk(self):
        acc = accumulate_directions(np.zeros(3))
        assert direction_projection(acc, 3, 1, 0.0) == pytest.approx(2.0)

    def test_same_step_is_zero(self):
        acc = accumulate_directions(np.array([0.0, 0.4, 1.0]))
        assert direction_projection(acc, 2, 2, 0.77) == 0.0

    def test_single_term(self):
        acc = accumulate_directions(np.array([0.0, math.pi / 2]))
        value = direction_projection(acc, 2, 1, math.pi / 4)
        assert value == pytest.approx(math.cos(-math.pi / 4), abs=1e-12)


class TestGammaSystem:
    def test_exact_at_true_bearing(self, turning_oracle):
        system = build_gamma_system(
            turning_oracle["ranges"],
            turning_oracle["accumulators"],
            PAIR,
            turning_oracle["gamma"],
        )
        solution = solve_gamma_system(system)
        assert solution.feasible
        assert solution.residual <= 1e-9
        assert solution.step_length == pytest.approx(turning_oracle["step_length"], abs=1e-7)
        assert solution.bias == pytest.approx(turning_oracle["bias"], abs=1e-7)

    def test_wrong_bearing_has_larger_residual(self, turning_oracle):
        at_truth = solve_gamma_system(
            build_gamma_system(
                turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, turning_oracle["gamma"]
            )
        )
        offset = solve_gamma_system(
            build_gamma_system(
                turning_oracle["ranges"],
                turning_oracle["accumulators"],
                PAIR,
                turning_oracle["gamma"] + 0.3,
            )
        )
        assert offset.residual > at_truth.residual

    def test_too_few_steps(self):
        headings = l_shaped_headings(4)
        ranges = oracle_local_ranges(np.array([2.0, 5.0]), 0.65, 1.5, headings)
        with pytest.raises(TooFewStepsError):
            build_gamma_system(ranges, accumulate_directions(headings), ReferenceStepPair(1, 2), 0.3)

    def test_rank_collapses_at_projection_root(self, turning_oracle):
        acc = turning_oracle["accumulators"]
        root = brentq(
            lambda g: direction_projection(acc, PAIR.a1, PAIR.a2, g), 0.0, math.pi - 1e-12
        )
        system = build_gamma_system(turning_oracle["ranges"], acc, PAIR, root)
        singular_values = np.linalg.svd(system.matrix, compute_uv=False)
        assert singular_values[1] <= 1e-8 * singular_values[0]
        with pytest.raises(UnderdeterminedSystemError):
            solve_gamma_system(system)

    def test_half_period_equivalence(self, turning_oracle):
        rng = np.random.default_rng(5)
        for gamma in rng.uniform(0.0, math.pi, size=16):
            low = solve_gamma_system(
                build_gamma_system(turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, gamma)
            )
            high = solve_gamma_system(
                build_gamma_system(
                    turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, gamma + math.pi
                )
            )
            assert abs(low.squared_step_length - high.squared_step_length) <= 1e-9
            assert abs(low.bias - high.bias) <= 1e-9


class TestRadiusConsistency:
    def test_vanishes_at_truth(self, turning_oracle):
        cost = radius_consistency_cost(
            turning_oracle["ranges"],
            turning_oracle["accumulators"],
            PAIR,
            turning_oracle["gamma"],
            turning_oracle["step_length"],
            turning_oracle["bias"],
        )
        assert cost <= 1e-7

    def test_all_projections_zero_gives_sentinel(self):
        # straight walk: every displacement is along X, so the bearing
        # pi/2 zeroes every projection and no entries survive
        headings = np.zeros(6)
        ranges = oracle_local_ranges(np.array([3.0, 4.0]), 0.7, 1.0, headings)
        cost = radius_consistency_cost(
            ranges, accumulate_directions(headings), ReferenceStepPair(1, 2), math.pi / 2, 0.7, 1.0
        )
        assert math.isinf(cost)

    def test_positive_step_required(self, turning_oracle):
        with pytest.raises(ValueError):
            radius_consistency_cost(
                turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, 0.3, 0.0, 1.0
            )


class TestSearchGamma:
    def test_noise_free_recovery(self, turning_oracle):
        result = search_gamma(
            turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, GammaSearchConfig()
        )
        assert result.gamma == pytest.approx(turning_oracle["gamma"], abs=1e-6)
        assert result.step_length == pytest.approx(turning_oracle["step_length"], abs=1e-7)
        assert result.bias == pytest.approx(turning_oracle["bias"], abs=1e-7)
        assert result.residual <= 1e-9

    def test_grid_only_mode(self, turning_oracle):
        config = GammaSearchConfig(grid_size=2048, refine_tol=None)
        result = search_gamma(
            turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, config
        )
        assert result.gamma == pytest.approx(turning_oracle["gamma"], abs=config.resolution)
        assert result.step_length == pytest.approx(turning_oracle["step_length"], abs=1e-4)
        assert result.bias == pytest.approx(turning_oracle["bias"], abs=1e-4)

    def test_residual_weighted_search_also_recovers(self, turning_oracle):
        config = GammaSearchConfig(w1=1.0, w2=0.0)
        result = search_gamma(
            turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, config
        )
        assert result.step_length == pytest.approx(turning_oracle["step_length"], abs=1e-6)

    def test_infeasible_when_no_bearing_admissible(self):
        # ranges shrink along the walk faster than any positive step/bias
        # pair can explain: every cell solves to d^2 <= 0 or b >= min range
        headings = l_shaped_headings(6, turn_after=2)
        ranges = np.array([10.0, 5.0, 2.0, 1.0, 0.8, 0.7])
        acc = accumulate_directions(headings)
        with pytest.raises(InfeasibleError) as err:
            search_gamma(ranges, acc, ReferenceStepPair(5, 6), GammaSearchConfig(grid_size=256))
        assert err.value.condition == "gamma-feasible-set-empty"

    def test_batch_matches_single(self, turning_oracle):
        config = GammaSearchConfig()
        candidates = (1, 2, 5, 6, 8)
        scan = GammaScan(
            turning_oracle["ranges"], turning_oracle["accumulators"], candidates, config.grid()
        )
        pairs = [ReferenceStepPair(1, 2), ReferenceStepPair(2, 6), ReferenceStepPair(5, 8)]
        batch_results = search_gamma_batch(
            turning_oracle["ranges"], turning_oracle["accumulators"], pairs, config, scan=scan
        )
        for pair, batched in zip(pairs, batch_results):
            single = search_gamma(
                turning_oracle["ranges"], turning_oracle["accumulators"], pair, config
            )
            assert batched.gamma == pytest.approx(single.gamma, abs=1e-9)
            assert batched.step_length == pytest.approx(single.step_length, abs=1e-9)
            assert batched.bias == pytest.approx(single.bias, abs=1e-9)


class TestScanConsistency:
    def test_grid_scan_matches_direct_operations(self, turning_oracle):
        config = GammaSearchConfig(grid_size=64)
        scan = GammaScan(
            turning_oracle["ranges"], turning_oracle["accumulators"], PAIR.as_tuple(), config.grid()
        )
        pair_scan = scan.scan_pair(PAIR)
        for cell in range(0, 64, 7):
            gamma = float(pair_scan.gammas[cell])
            system = build_gamma_system(
                turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, gamma
            )
            try:
                solution = solve_gamma_system(system)
            except UnderdeterminedSystemError:
                assert pair_scan.underdetermined[cell]
                continue
            assert pair_scan.squared_step[cell] == pytest.approx(
                solution.squared_step_length, rel=1e-9, abs=1e-9
            )
            assert pair_scan.bias[cell] == pytest.approx(solution.bias, rel=1e-9, abs=1e-9)
            assert pair_scan.residual[cell] == pytest.approx(solution.residual, rel=1e-6, abs=1e-6)
            if pair_scan.feasible[cell]:
                spread = radius_consistency_cost(
                    turning_oracle["ranges"],
                    turning_oracle["accumulators"],
                    PAIR,
                    gamma,
                    solution.step_length,
                    solution.bias,
                )
                if math.isfinite(spread) and spread > 1e-4:
                    assert pair_scan.spread[cell] == pytest.approx(spread, rel=1e-6)

    def test_exact_batch_matches_direct_operations(self, turning_oracle):
        scan = GammaScan(
            turning_oracle["ranges"],
            turning_oracle["accumulators"],
            (1, 2, 5, 6),
            GammaSearchConfig(grid_size=64).grid(),
        )
        pairs = [ReferenceStepPair(1, 5), ReferenceStepPair(2, 6)]
        batch = _PairBatch(scan, pairs, 0.3, 0.7)
        gammas = np.array([[0.4, 1.1], [0.9, 2.5]])
        cost, d2, bias, residual, spread = batch.evaluate(gammas)
        for i, pair in enumerate(pairs):
            for k in range(2):
                solution = solve_gamma_system(
                    build_gamma_system(
                        turning_oracle["ranges"],
                        turning_oracle["accumulators"],
                        pair,
                        gammas[i, k],
                    )
                )
                assert d2[i, k] == pytest.approx(solution.squared_step_length, rel=1e-9)
                assert bias[i, k] == pytest.approx(solution.bias, rel=1e-9)
                assert residual[i, k] == pytest.approx(solution.residual, rel=1e-7, abs=1e-9)
                if solution.feasible:
                    direct = radius_consistency_cost(
                        turning_oracle["ranges"],
                        turning_oracle["accumulators"],
                        pair,
                        gammas[i, k],
                        solution.step_length,
                        solution.bias,
                    )
                    assert spread[i, k] == pytest.approx(direct, rel=1e-9, abs=1e-12)


class TestInitialPosition:
    def test_oracle_recovery(self, turning_oracle):
        z1 = solve_initial_position(
            turning_oracle["ranges"],
            turning_oracle["accumulators"],
            PAIR,
            turning_oracle["step_length"],
            turning_oracle["bias"],
        )
        np.testing.assert_allclose(z1, turning_oracle["z1"], atol=1e-7)

    def test_straight_headings_rejected(self):
        headings = np.zeros(8)
        ranges = oracle_local_ranges(np.array([2.0, 5.0]), 0.65, 1.5, headings)
        with pytest.raises(RankDeficientError):
            solve_initial_position(ranges, accumulate_directions(headings), PAIR, 0.65, 1.5)

    def test_translation_consistency(self, turning_oracle):
        # starting the same walk k steps later shifts the recovered first
        # position by exactly the walked offset
        headings = turning_oracle["headings"]
        acc = turning_oracle["accumulators"]
        d = turning_oracle["step_length"]
        k = 2
        shifted_z1 = turning_oracle["z1"] + d * np.array(
            [acc.cos_sums[k], acc.sin_sums[k]]
        )
        shifted_ranges = oracle_local_ranges(
            shifted_z1, d, turning_oracle["bias"], headings
        )
        recovered = solve_initial_position(
            shifted_ranges, acc, PAIR, d, turning_oracle["bias"]
        )
        np.testing.assert_allclose(recovered, shifted_z1, atol=1e-7)

    def test_positive_step_required(self, turning_oracle):
        with pytest.raises(ValueError):
            solve_initial_position(
                turning_oracle["ranges"], turning_oracle["accumulators"], PAIR, -0.1, 1.0
            )

    def test_batched_matches_public(self, turning_oracle):
        scan = GammaScan(
            turning_oracle["ranges"],
            turning_oracle["accumulators"],
            (1, 2, 5, 6),
            GammaSearchConfig(grid_size=64).grid(),
        )
        pairs = [ReferenceStepPair(1, 5), ReferenceStepPair(2, 6), ReferenceStepPair(1, 6)]
        batch = _PairBatch(scan, pairs, 0.0, 1.0)
        stacked = initial_positions_batch(scan, batch, 0.65, 1.5)
        for i, pair in enumerate(pairs):
            direct = solve_initial_position(
                turning_oracle["ranges"], turning_oracle["accumulators"], pair, 0.65, 1.5
            )
            np.testing.assert_allclose(stacked[i], direct, atol=1e-9)


class TestEndToEndExactness:
    def test_random_noise_free_scenarios(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            n = int(rng.integers(5, 30))
            headings = np.zeros(n)
            slots = rng.choice(np.arange(1, n - 1), size=max(1, n // 8), replace=False)
            turn_values = rng.choice([-math.pi / 2, math.pi / 2], size=slots.size)
            turns = np.zeros(n)
            turns[slots] = turn_values
            headings = np.cumsum(turns)
            radius = rng.uniform(3.0, 15.0)
            angle = rng.uniform(0.05, math.pi - 0.05)
            if abs(angle - math.pi / 2) < 0.05:
                angle += 0.1
            z1 = radius * np.array([math.cos(angle), math.sin(angle)])
            d = rng.uniform(0.5, 0.9)
            b = rng.uniform(0.0, 4.0)
            ranges = oracle_local_ranges(z1, d, b, headings)
            acc = accumulate_directions(headings)
            order = np.argsort(ranges) + 1
            pair = ReferenceStepPair(int(order[0]), int(order[1]))
            result = search_gamma(ranges, acc, pair, GammaSearchConfig())
            assert result.step_length == pytest.approx(d, rel=1e-6)
            assert result.bias == pytest.approx(b, rel=1e-6, abs=1e-6)
            z1_hat = solve_initial_position(ranges, acc, pair, result.step_length, result.bias)
            np.testing.assert_allclose(z1_hat, z1, rtol=1e-6, atol=1e-6)
