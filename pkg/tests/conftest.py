"""Shared brute-force oracles for the estimator tests.

These helpers intentionally duplicate the walk/range model with explicit
loops so the solvers are checked against an independent construction, not
against the package's own vectorized geometry.
"""

import math

import numpy as np
import pytest

from rttpdr.geometry import accumulate_directions
from rttpdr.types import ApDescriptor


def oracle_local_walk(z1, step_length, headings):
    """AP-local positions computed step by step: z_{n+1} = z_n + d*[cos, sin]."""
    points = [np.asarray(z1, dtype=float)]
    for theta in headings[:-1]:
        points.append(points[-1] + step_length * np.array([math.cos(theta), math.sin(theta)]))
    return np.stack(points)


def oracle_local_ranges(z1, step_length, bias, headings):
    """Biased ranges for a walk given in the AP-local frame."""
    points = oracle_local_walk(z1, step_length, headings)
    return np.array([math.hypot(*p) + bias for p in points])


def oracle_global_walk(start, omega, step_length, headings):
    """Global positions p_{n+1} = p_n + d*[cos(omega+theta_n), sin(omega+theta_n)]."""
    points = [np.asarray(start, dtype=float)]
    for theta in headings[:-1]:
        angle = omega + theta
        points.append(points[-1] + step_length * np.array([math.cos(angle), math.sin(angle)]))
    return np.stack(points)


def oracle_global_ranges(positions, ap_position, bias):
    return np.array([np.linalg.norm(np.asarray(ap_position) - p) + bias for p in positions])


def straight_headings(n):
    return np.zeros(n)


def l_shaped_headings(n, turn_after=3):
    """Straight, then one quarter turn: theta jumps to pi/2 at index turn_after."""
    headings = np.zeros(n)
    headings[turn_after:] = math.pi / 2.0
    return headings


@pytest.fixture
def linear_oracle():
    """The reference straight-walk scenario used across the linear tests."""
    z1 = np.array([3.0, 4.0])
    step_length = 0.7
    bias = 2.0
    headings = straight_headings(6)
    ranges = oracle_local_ranges(z1, step_length, bias, headings)
    return {
        "z1": z1,
        "step_length": step_length,
        "bias": bias,
        "headings": headings,
        "ranges": ranges,
    }


@pytest.fixture
def turning_oracle():
    """The reference turning-walk scenario used across the bearing tests."""
    z1 = np.array([2.0, 5.0])
    step_length = 0.65
    bias = 1.5
    headings = l_shaped_headings(8, turn_after=3)
    ranges = oracle_local_ranges(z1, step_length, bias, headings)
    return {
        "z1": z1,
        "step_length": step_length,
        "bias": bias,
        "headings": headings,
        "accumulators": accumulate_directions(headings),
        "ranges": ranges,
        "gamma": math.atan2(z1[1], z1[0]) % math.pi,
    }


def make_aps(*positions):
    return tuple(ApDescriptor(i + 1, p) for i, p in enumerate(positions))
