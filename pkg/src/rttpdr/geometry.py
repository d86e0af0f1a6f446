"""Coordinate transforms and per-step direction accumulators.

The walk model in an AP-local frame: with step length d and cumulative
headings theta_n, consecutive positions satisfy

    z_{n+1} = z_n + d * [cos(theta_n), sin(theta_n)]

which telescopes to z_n = z_1 + d * [c_n, s_n] with the prefix sums

    c_n = sum_{j=1}^{n-1} cos(theta_j),   s_n = sum_{j=1}^{n-1} sin(theta_j)

(c_1 = s_1 = 0). For a straight walk c_n = n - 1 and s_n = 0. Every solver
in this package is written in terms of (c_n, s_n), never raw step numbers,
so that linear and turning walks share one set of formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import ApDescriptor, cumulative_headings

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    return 0.0 if wrapped == TWO_PI else wrapped


@dataclass(frozen=True)
class DirectionAccumulators:
    """Prefix sums of heading cosines/sines, one entry per step (1-based
    step n lives at array index n-1)."""

    cos_sums: np.ndarray  # c_n
    sin_sums: np.ndarray  # s_n
    headings: np.ndarray  # theta_n, kept for classification and diagnostics

    def __post_init__(self):
        for name in ("cos_sums", "sin_sums", "headings"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self) -> int:
        return self.cos_sums.shape[0]

    @property
    def squared_norms(self) -> np.ndarray:
        """c_n^2 + s_n^2 per step."""
        return self.cos_sums**2 + self.sin_sums**2


def accumulate_directions(steps) -> DirectionAccumulators:
    """Compute (c_n, s_n) for a step sequence or a raw heading array."""
    if isinstance(steps, np.ndarray):
        headings = np.asarray(steps, dtype=float)
    else:
        headings = cumulative_headings(steps)
    if headings.size == 0:
        raise ValueError("cannot accumulate an empty step sequence")
    cos_sums = np.concatenate(([0.0], np.cumsum(np.cos(headings[:-1]))))
    sin_sums = np.concatenate(([0.0], np.cumsum(np.sin(headings[:-1]))))
    return DirectionAccumulators(cos_sums=cos_sums, sin_sums=sin_sums, headings=headings)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotate(vectors, angle: float) -> np.ndarray:
    """Rotate a 2-vector or an (N, 2) stack counterclockwise by ``angle``."""
    arr = np.asarray(vectors, dtype=float)
    return arr @ rotation_matrix(angle).T


def local_to_global(points, ap: ApDescriptor | np.ndarray, angle: float) -> np.ndarray:
    """Map AP-local coordinates to the global frame.

    The local frame has its origin at the AP and its X-axis along the
    initial walking direction ``angle``, so p = p_AP + R(angle) @ z.
    """
    origin = ap.position if isinstance(ap, ApDescriptor) else np.asarray(ap, dtype=float)
    return origin + rotate(points, angle)


def propagate_trajectory(z1, step_length: float, accumulators: DirectionAccumulators) -> np.ndarray:
    """Unroll a relative trajectory from its first point: z_n = z1 + d*[c_n, s_n]."""
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    start = np.asarray(z1, dtype=float)
    offsets = np.stack([accumulators.cos_sums, accumulators.sin_sums], axis=1)
    return start + step_length * offsets
