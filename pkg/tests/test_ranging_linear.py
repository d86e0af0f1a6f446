import math

import numpy as np
import pytest

from conftest import oracle_local_ranges, straight_headings
from rttpdr.ranging_linear import (
    ReferenceStepPair,
    StepBiasSystem,
    build_step_bias_system,
    recover_along_track,
    recover_cross_track,
    solve_step_bias_system,
)
from rttpdr.types import RankDeficientError, TooFewStepsError


REFERENCE_PAIR = ReferenceStepPair(2, 5)


class TestBuildSystem:
    def test_exact_recovery_of_squared_step_and_bias(self, linear_oracle):
        system = build_step_bias_system(linear_oracle["ranges"], REFERENCE_PAIR)
        solution = solve_step_bias_system(system)
        assert solution.squared_step_length == pytest.approx(0.49, abs=1e-9)
        assert solution.bias == pytest.approx(2.0, abs=1e-9)
        assert solution.feasible

    def test_first_column_is_constant_reference_gap(self, linear_oracle):
        system = build_step_bias_system(linear_oracle["ranges"], REFERENCE_PAIR)
        np.testing.assert_array_equal(system.matrix[:, 0], np.full(4, 2 - 5))
        assert system.row_steps == (1, 3, 4, 6)

    def test_too_few_steps(self):
        ranges = oracle_local_ranges(np.array([3.0, 4.0]), 0.7, 2.0, straight_headings(3))
        with pytest.raises(TooFewStepsError):
            build_step_bias_system(ranges, ReferenceStepPair(1, 2))

    def test_reference_step_needs_valid_range(self, linear_oracle):
        ranges = linear_oracle["ranges"].copy()
        ranges[4] = np.nan
        with pytest.raises(ValueError):
            build_step_bias_system(ranges, REFERENCE_PAIR)

    def test_missing_rows_are_skipped(self, linear_oracle):
        ranges = linear_oracle["ranges"].copy()
        ranges[2] = np.nan
        system = build_step_bias_system(ranges, REFERENCE_PAIR)
        assert system.row_steps == (1, 4, 6)
        solution = solve_step_bias_system(system)
        assert solution.bias == pytest.approx(2.0, abs=1e-9)

    def test_zero_bias_recovered(self):
        ranges = oracle_local_ranges(np.array([3.0, 4.0]), 0.7, 0.0, straight_headings(6))
        solution = solve_step_bias_system(build_step_bias_system(ranges, REFERENCE_PAIR))
        assert solution.bias == pytest.approx(0.0, abs=1e-9)


class TestSolveSystem:
    def test_residual_vanishes_on_exact_data(self, linear_oracle):
        system = build_step_bias_system(linear_oracle["ranges"], REFERENCE_PAIR)
        assert solve_step_bias_system(system).residual <= 1e-9

    def test_row_order_invariance(self, linear_oracle):
        system = build_step_bias_system(linear_oracle["ranges"], REFERENCE_PAIR)
        shuffled = StepBiasSystem(
            matrix=system.matrix[::-1].copy(),
            rhs=system.rhs[::-1].copy(),
            row_steps=tuple(reversed(system.row_steps)),
        )
        a = solve_step_bias_system(system)
        b = solve_step_bias_system(shuffled)
        assert a.squared_step_length == pytest.approx(b.squared_step_length, abs=1e-12)
        assert a.bias == pytest.approx(b.bias, abs=1e-12)

    def test_rank_deficient_matrix_rejected(self):
        system = StepBiasSystem(
            matrix=np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]),
            rhs=np.array([1.0, 1.0, 1.0]),
            row_steps=(1, 2, 3),
        )
        with pytest.raises(RankDeficientError):
            solve_step_bias_system(system)

    def test_negative_squared_step_flags_infeasible(self):
        system = StepBiasSystem(
            matrix=np.array([[1.0, 0.0], [0.0, 1.0]]),
            rhs=np.array([-0.25, 3.0]),
            row_steps=(1, 2),
        )
        solution = solve_step_bias_system(system)
        assert not solution.feasible
        assert math.isnan(solution.step_length)

    def test_noise_monte_carlo(self):
        # sigma = 0.1 m, N = 30, walk passing the AP. Bounds frozen from an
        # oracle run of this exact setup: the step length is tight (90th
        # percentile ~0.13 m) while a single pair's bias estimate is
        # intrinsically noisy (both system columns are near-constant, so
        # noise amplifies; 90th percentile ~3.4 m). The ensemble median is
        # what controls bias error in the full pipeline.
        rng = np.random.default_rng(1234)
        n, trials = 30, 1000
        d_hits = b_hits = solved = 0
        for _ in range(trials):
            z1 = np.array([rng.uniform(-12.0, -6.0), rng.uniform(1.0, 4.0) * rng.choice([-1, 1])])
            d = rng.uniform(0.5, 0.9)
            b = rng.uniform(0.5, 4.0)
            ranges = oracle_local_ranges(z1, d, b, straight_headings(n))
            ranges = ranges + rng.normal(0.0, 0.1, size=n)
            pair = ReferenceStepPair(3, 12)
            try:
                solution = solve_step_bias_system(build_step_bias_system(ranges, pair))
            except RankDeficientError:
                continue
            if not solution.feasible:
                continue
            solved += 1
            d_hits += abs(solution.step_length - d) < 0.5
            b_hits += abs(solution.bias - b) < 4.0
        assert solved >= 0.95 * trials
        assert d_hits >= 0.9 * trials
        assert b_hits >= 0.9 * trials


class TestInitialPosition:
    def test_along_track_exact(self, linear_oracle):
        q1 = recover_along_track(0.7, 2.0, linear_oracle["ranges"], REFERENCE_PAIR)
        assert q1 == pytest.approx(3.0, abs=1e-9)

    def test_minimal_steps_match_direct_algebra(self):
        z1 = np.array([1.5, 2.5])
        ranges = oracle_local_ranges(z1, 0.6, 1.0, straight_headings(4))
        pair = ReferenceStepPair(1, 4)
        q1 = recover_along_track(0.6, 1.0, ranges, pair)
        # direct algebra on one equation pair: subtract k=0 from k=2
        k = np.arange(4)
        direct = (
            ranges[2] ** 2
            - ranges[0] ** 2
            - 2.0 * 1.0 * (ranges[2] - ranges[0])
            - (k[2] ** 2 - k[0] ** 2) * 0.6**2
        ) / (2.0 * (k[2] - k[0]) * 0.6)
        assert q1 == pytest.approx(direct, abs=1e-9)
        assert q1 == pytest.approx(z1[0], abs=1e-9)

    def test_positive_step_required(self, linear_oracle):
        with pytest.raises(ValueError):
            recover_along_track(0.0, 2.0, linear_oracle["ranges"], REFERENCE_PAIR)
        with pytest.raises(ValueError):
            recover_cross_track(-0.1, 2.0, 3.0, linear_oracle["ranges"])

    def test_cross_track_exact(self, linear_oracle):
        result = recover_cross_track(0.7, 2.0, 3.0, linear_oracle["ranges"])
        assert result.feasible
        assert result.positive == pytest.approx(4.0, abs=1e-9)
        assert result.negative == pytest.approx(-4.0, abs=1e-9)

    def test_ap_on_walking_line(self):
        ranges = oracle_local_ranges(np.array([2.0, 0.0]), 0.7, 1.0, straight_headings(6))
        result = recover_cross_track(0.7, 1.0, 2.0, ranges)
        assert result.positive == pytest.approx(0.0, abs=1e-7)

    def test_inconsistent_inputs_flagged(self, linear_oracle):
        # along-track pushed far beyond what the ranges allow makes every
        # radicand negative
        result = recover_cross_track(0.7, 2.0, 100.0, linear_oracle["ranges"])
        assert not result.feasible
        assert result.clamped_fraction == 1.0


class TestEndToEndProperties:
    def test_exact_recovery_random_scenarios(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            z1 = np.array([rng.uniform(-8, 8), rng.uniform(1.0, 8.0) * rng.choice([-1, 1])])
            d = rng.uniform(0.4, 1.0)
            b = rng.uniform(0.0, 5.0)
            ranges = oracle_local_ranges(z1, d, b, straight_headings(n))
            candidates = sorted(rng.choice(np.arange(1, n + 1), size=2, replace=False))
            pair = ReferenceStepPair(int(candidates[0]), int(candidates[1]))
            solution = solve_step_bias_system(build_step_bias_system(ranges, pair))
            assert solution.feasible
            assert solution.step_length == pytest.approx(d, rel=1e-7)
            assert solution.bias == pytest.approx(b, abs=max(1e-7, abs(b) * 1e-7))
            q1 = recover_along_track(solution.step_length, solution.bias, ranges, pair)
            assert q1 == pytest.approx(z1[0], rel=1e-7, abs=1e-7)
            cross = recover_cross_track(solution.step_length, solution.bias, q1, ranges)
            assert cross.positive == pytest.approx(abs(z1[1]), rel=1e-7)

    def test_mirror_images_produce_identical_ranges(self):
        headings = straight_headings(10)
        plus = oracle_local_ranges(np.array([2.0, 3.0]), 0.7, 1.0, headings)
        minus = oracle_local_ranges(np.array([2.0, -3.0]), 0.7, 1.0, headings)
        np.testing.assert_allclose(plus, minus, atol=1e-12)
