import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rttpdr.geometry import (
    accumulate_directions,
    local_to_global,
    normalize_angle,
    propagate_trajectory,
    rotate,
    rotation_matrix,
)
from rttpdr.types import ApDescriptor

finite_angles = st.floats(-10.0, 10.0)
vectors = st.tuples(st.floats(-100, 100), st.floats(-100, 100)).map(np.array)


class TestAccumulators:
    def test_straight_walk(self):
        acc = accumulate_directions(np.zeros(3))
        np.testing.assert_array_equal(acc.cos_sums, [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(acc.sin_sums, [0.0, 0.0, 0.0])

    def test_quarter_turn_after_first_step(self):
        acc = accumulate_directions(np.array([0.0, math.pi / 2, math.pi / 2]))
        np.testing.assert_allclose(acc.cos_sums, [0.0, 1.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(acc.sin_sums, [0.0, 0.0, 1.0], atol=1e-15)

    def test_reversal(self):
        acc = accumulate_directions(np.array([0.0, math.pi]))
        np.testing.assert_allclose(acc.cos_sums, [0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(acc.sin_sums, [0.0, 0.0], atol=1e-15)

    @given(st.lists(st.floats(-3.0, 3.0), min_size=1, max_size=30))
    def test_prefix_sums_exact(self, headings):
        headings = np.asarray(headings)
        acc = accumulate_directions(headings)
        for n in range(len(headings)):
            assert acc.cos_sums[n] == pytest.approx(np.sum(np.cos(headings[:n])), abs=1e-12)
            assert acc.sin_sums[n] == pytest.approx(np.sum(np.sin(headings[:n])), abs=1e-12)


class TestRotate:
    def test_quarter_turn(self):
        np.testing.assert_allclose(rotate(np.array([1.0, 0.0]), math.pi / 2), [0.0, 1.0], atol=1e-15)

    def test_identity(self):
        np.testing.assert_array_equal(rotate(np.array([3.0, 4.0]), 0.0), [3.0, 4.0])

    def test_half_turn(self):
        np.testing.assert_allclose(rotate(np.array([1.0, 1.0]), math.pi), [-1.0, -1.0], atol=1e-12)

    @given(v=vectors, angle=finite_angles)
    def test_preserves_norm(self, v, angle):
        before = np.linalg.norm(v)
        after = np.linalg.norm(rotate(v, angle))
        assert after == pytest.approx(before, rel=4 * np.finfo(float).eps, abs=1e-300)

    @given(v=vectors, angle=finite_angles)
    def test_inverse(self, v, angle):
        back = rotate(rotate(v, angle), -angle)
        np.testing.assert_allclose(back, v, atol=1e-12)

    def test_rotation_is_unambiguous_over_full_circle(self):
        # distinct angles in [0, 2*pi) move any nonzero vector differently
        rng = np.random.default_rng(7)
        v = np.array([1.3, -0.4])
        for _ in range(200):
            a, b = rng.uniform(0.0, 2 * math.pi, size=2)
            if abs(a - b) < 1e-6:
                continue
            assert not np.allclose(rotate(v, a), rotate(v, b), atol=1e-9)

    def test_stack_rotation(self):
        pts = np.array([[1.0, 0.0], [0.0, 2.0]])
        out = rotate(pts, math.pi / 2)
        np.testing.assert_allclose(out, [[0.0, 1.0], [-2.0, 0.0]], atol=1e-12)


class TestLocalToGlobal:
    def test_origin_maps_to_ap(self):
        ap = ApDescriptor(1, (5.0, 5.0))
        np.testing.assert_array_equal(local_to_global(np.zeros(2), ap, 1.234), [5.0, 5.0])

    def test_identity_rotation(self):
        ap = ApDescriptor(1, (0.0, 0.0))
        np.testing.assert_array_equal(local_to_global(np.array([1.0, 0.0]), ap, 0.0), [1.0, 0.0])

    def test_quarter_turn_offset(self):
        ap = ApDescriptor(1, (1.0, 1.0))
        np.testing.assert_allclose(
            local_to_global(np.array([2.0, 0.0]), ap, math.pi / 2), [1.0, 3.0], atol=1e-12
        )


class TestPropagate:
    def test_straight(self):
        acc = accumulate_directions(np.zeros(3))
        points = propagate_trajectory(np.zeros(2), 1.0, acc)
        np.testing.assert_array_equal(points, [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])

    def test_turn(self):
        acc = accumulate_directions(np.array([0.0, math.pi / 2]))
        points = propagate_trajectory(np.array([1.0, 1.0]), 2.0, acc)
        np.testing.assert_allclose(points, [[1.0, 1.0], [3.0, 1.0]], atol=1e-12)

    def test_round_trip_recovers_offsets(self):
        headings = np.array([0.0, 0.4, -0.2, 1.0])
        acc = accumulate_directions(headings)
        z1 = np.array([2.0, -1.0])
        points = propagate_trajectory(z1, 0.8, acc)
        np.testing.assert_allclose(
            points - z1,
            0.8 * np.stack([acc.cos_sums, acc.sin_sums], axis=1),
            atol=1e-12,
        )

    def test_telescoping(self):
        headings = np.array([0.0, 0.7, 1.9, -0.3, 0.1])
        acc = accumulate_directions(headings)
        points = propagate_trajectory(np.array([0.5, 0.5]), 0.6, acc)
        steps = np.diff(points, axis=0)
        expected = 0.6 * np.stack(
            [np.cos(headings[:-1]), np.sin(headings[:-1])], axis=1
        )
        np.testing.assert_allclose(steps, expected, atol=1e-12)

    def test_requires_positive_step(self):
        acc = accumulate_directions(np.zeros(2))
        with pytest.raises(ValueError):
            propagate_trajectory(np.zeros(2), 0.0, acc)


def test_normalize_angle():
    assert normalize_angle(2 * math.pi) == 0.0
    assert normalize_angle(-0.1) == pytest.approx(2 * math.pi - 0.1)
    assert normalize_angle(7.0) == pytest.approx(7.0 - 2 * math.pi)
