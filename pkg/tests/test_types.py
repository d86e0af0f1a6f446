import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rttpdr.types import (
    ApDescriptor,
    InvalidMeasurementError,
    MeasurementSet,
    MobilityClass,
    RangeObservation,
    SPEED_OF_LIGHT,
    StepEvent,
    TrajectoryEstimate,
    classify_mobility,
    quantize_heading,
    quantize_heading_sequence,
    rtt_matrix,
    rtt_to_range,
    steps_from_heading_changes,
    validate_step_sequence,
)


class TestRttToRange:
    def test_round_numbers(self):
        assert rtt_to_range(2e-7) == pytest.approx(30.0, abs=1e-12)
        assert rtt_to_range(6.6667e-8) == pytest.approx(10.0, abs=1e-4)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidMeasurementError):
            rtt_to_range(0.0)
        with pytest.raises(InvalidMeasurementError):
            rtt_to_range(-1e-9)
        with pytest.raises(InvalidMeasurementError):
            rtt_to_range(np.array([1e-8, -1e-8]))

    def test_nan_marks_missing(self):
        out = rtt_to_range(np.array([2e-7, np.nan]))
        assert out[0] == pytest.approx(30.0)
        assert np.isnan(out[1])

    @given(
        tau=st.floats(1e-10, 1e-5),
        scale=st.floats(0.1, 10.0),
    )
    def test_linearity(self, tau, scale):
        assert rtt_to_range(scale * tau) == pytest.approx(
            scale * rtt_to_range(tau), rel=1e-12
        )

    def test_speed_of_light_constant(self):
        assert SPEED_OF_LIGHT == 3.0e8


class TestClassifyMobility:
    def test_straight(self):
        assert classify_mobility(np.zeros(4)) is MobilityClass.LINEAR

    def test_turning(self):
        headings = np.array([0.0, math.pi / 2, math.pi / 2, math.pi / 2])
        assert classify_mobility(headings) is MobilityClass.ARBITRARY

    def test_tolerance(self):
        headings = np.array([0.0, 1e-9, 0.0, 0.0])
        assert classify_mobility(headings, angle_tolerance=1e-6) is MobilityClass.LINEAR
        assert classify_mobility(headings, angle_tolerance=1e-12) is MobilityClass.ARBITRARY

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_mobility(np.array([]))

    def test_accepts_step_events(self):
        steps = steps_from_heading_changes([0.0, 0.5, 1.0], [0.0, 0.0, 0.0])
        assert classify_mobility(steps) is MobilityClass.LINEAR


class TestQuantizeHeading:
    def test_snaps_to_quarter_turns(self):
        assert quantize_heading(1.62) == pytest.approx(math.pi / 2)
        assert quantize_heading(0.1) == 0.0
        assert quantize_heading(-1.5) == pytest.approx(-math.pi / 2)

    @given(st.floats(-2 * math.pi + 1e-9, 2 * math.pi - 1e-9))
    def test_idempotent(self, raw):
        once = quantize_heading(raw)
        assert quantize_heading(once) == once

    def test_sequence_matches_scalar(self):
        raw = np.array([0.1, 1.62, -1.5, 3.0])
        np.testing.assert_allclose(
            quantize_heading_sequence(raw), [quantize_heading(v) for v in raw]
        )


class TestStepSequences:
    @given(st.lists(st.floats(-1.5, 1.5), min_size=1, max_size=40))
    def test_cumulative_heading_is_prefix_sum(self, turns):
        turns[0] = 0.0
        times = np.arange(len(turns), dtype=float)
        steps = steps_from_heading_changes(times, turns)
        running = 0.0
        for step, turn in zip(steps, turns):
            running += turn
            assert step.cumulative_heading == pytest.approx(running, abs=1e-12)
        validate_step_sequence(steps)

    def test_first_turn_must_be_zero(self):
        with pytest.raises(ValueError):
            steps_from_heading_changes([0.0, 1.0], [0.3, 0.0])

    def test_times_strictly_increasing(self):
        with pytest.raises(ValueError):
            steps_from_heading_changes([0.0, 0.0], [0.0, 0.1])

    def test_validate_rejects_broken_prefix(self):
        good = steps_from_heading_changes([0.0, 1.0], [0.0, 0.5])
        broken = (good[0], StepEvent(2, 1.0, 0.5, 0.4))
        with pytest.raises(ValueError):
            validate_step_sequence(broken)


class TestMeasurementTypes:
    def test_rtts_validated(self):
        step = StepEvent(1, 0.0, 0.0, 0.0)
        with pytest.raises(InvalidMeasurementError):
            MeasurementSet(step=step, rtts=np.array([1e-8, -1e-8]))
        ok = MeasurementSet(step=step, rtts=np.array([1e-8, np.nan]))
        assert ok.num_aps == 2

    def test_rtt_matrix_requires_consistent_width(self):
        step = StepEvent(1, 0.0, 0.0, 0.0)
        step2 = StepEvent(2, 1.0, 0.0, 0.0)
        a = MeasurementSet(step=step, rtts=np.array([1e-8, 2e-8]))
        b = MeasurementSet(step=step2, rtts=np.array([1e-8]))
        with pytest.raises(ValueError):
            rtt_matrix([a, b])

    def test_range_observation(self):
        step = StepEvent(1, 0.0, 0.0, 0.0)
        m = MeasurementSet(step=step, rtts=np.array([2e-7, np.nan]))
        obs = RangeObservation.from_measurement(m)
        assert obs.distances[0] == pytest.approx(30.0)
        assert np.isnan(obs.distances[1])

    def test_ap_descriptor_validation(self):
        with pytest.raises(ValueError):
            ApDescriptor(1, (0.0, np.inf))
        with pytest.raises(ValueError):
            ApDescriptor(1, (0.0, 0.0, 0.0))


class TestTrajectoryEstimate:
    def test_heading_must_be_normalized(self):
        points = np.zeros((3, 2))
        TrajectoryEstimate(points, heading=0.0, contributing_aps=frozenset({1}))
        TrajectoryEstimate(points, heading=None, contributing_aps=frozenset())
        with pytest.raises(ValueError):
            TrajectoryEstimate(points, heading=7.0, contributing_aps=frozenset())
