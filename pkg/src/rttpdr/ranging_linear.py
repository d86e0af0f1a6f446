"""Joint RTT-bias and step-length estimation for straight-line walks.

For a walk with no turns, the AP-local positions are z_n = [q1 + k_n*d, u1]
with k_n = n - 1, so each biased range r_n satisfies

    (q1 + k_n*d)^2 + u1^2 = (r_n - b)^2.

Subtracting the equation of a reference step a removes the constant
q1^2 + u1^2 terms; doing this for two reference steps a1, a2 and taking the
difference of the two resulting relations also removes the q1*d term and
leaves, per remaining step n, one equation that is linear in d^2 and b:

    d^2*(a1 - a2) + 2b*[ (r_n - r_a1)/(k_n - k_a1) - (r_n - r_a2)/(k_n - k_a2) ]
        = (r_n^2 - r_a1^2)/(k_n - k_a1) - (r_n^2 - r_a2^2)/(k_n - k_a2)

Stacking those rows gives a two-unknown least-squares problem; four valid
steps are the minimum for it to be determined. Once (d, b) are known, q1
follows in closed form from the pairwise relations and |u1| from the
per-step radicands (r_n - b)^2 - (q1 + k_n*d)^2. The sign of u1 is not
identifiable from a single AP: both mirror images produce identical range
sequences. Resolving it needs several APs (see :mod:`rttpdr.alignment`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import RankDeficientError, TooFewStepsError

MIN_STEPS_LINEAR = 4

#: Reject the two-unknown solve when cond(A^T A) exceeds this; noise can
#: otherwise blow up the estimate without an obvious symptom.
NORMAL_EQUATION_CONDITION_LIMIT = 1e12

#: Declare the cross-track recovery infeasible when more than this fraction
#: of radicands had to be clamped at zero.
MAX_CLAMPED_FRACTION = 0.5


@dataclass(frozen=True)
class ReferenceStepPair:
    """Two distinct 1-based step indices whose equations are subtracted to
    linearize the ranging system."""

    a1: int
    a2: int

    def __post_init__(self):
        if self.a1 == self.a2:
            raise ValueError("reference steps must be distinct")
        if self.a1 < 1 or self.a2 < 1:
            raise ValueError("reference steps are 1-based")

    def as_tuple(self) -> tuple[int, int]:
        return (self.a1, self.a2)


@dataclass(frozen=True)
class StepBiasSystem:
    """Stacked linear system in the unknowns [d^2, b]."""

    matrix: np.ndarray  # (rows, 2)
    rhs: np.ndarray  # (rows,)
    row_steps: tuple[int, ...]  # contributing 1-based step indices


@dataclass(frozen=True)
class StepBiasSolution:
    squared_step_length: float
    bias: float
    residual: float
    feasible: bool  # False when d^2 <= 0

    @property
    def step_length(self) -> float:
        if not self.feasible:
            return math.nan
        return math.sqrt(self.squared_step_length)


@dataclass(frozen=True)
class CrossTrackResult:
    """Cross-track magnitude |u1| and its two admissible signs."""

    magnitude: float
    clamped_fraction: float
    feasible: bool

    @property
    def positive(self) -> float:
        return self.magnitude

    @property
    def negative(self) -> float:
        return -self.magnitude


def _valid_step_indices(ranges: np.ndarray) -> np.ndarray:
    """1-based indices of steps whose range is present."""
    return np.flatnonzero(np.isfinite(np.asarray(ranges, dtype=float))) + 1


def build_step_bias_system(ranges, pair: ReferenceStepPair) -> StepBiasSystem:
    """Assemble the [d^2, b] system from one AP's ranges and a reference pair.

    ``ranges`` is the full per-step vector (NaN for steps where this AP did
    not answer); rows are produced only for valid steps outside the pair.
    Raises TooFewStepsError when fewer than four valid steps exist.
    """
    r = np.asarray(ranges, dtype=float)
    valid = _valid_step_indices(r)
    if valid.size < MIN_STEPS_LINEAR:
        raise TooFewStepsError(required=MIN_STEPS_LINEAR, available=int(valid.size))
    a1, a2 = pair.as_tuple()
    for a in (a1, a2):
        if a > r.size or not np.isfinite(r[a - 1]):
            raise ValueError(f"reference step {a} has no valid range")

    rows = valid[(valid != a1) & (valid != a2)]
    # straight-walk offsets k_n = n - 1; differences equal raw index gaps
    k = rows - 1
    k1, k2 = a1 - 1, a2 - 1
    rn = r[rows - 1]
    r1, r2 = r[a1 - 1], r[a2 - 1]

    gap1 = k - k1
    gap2 = k - k2
    col_bias = 2.0 * ((rn - r1) / gap1 - (rn - r2) / gap2)
    col_step = np.full(rows.size, float(k1 - k2))
    rhs = (rn**2 - r1**2) / gap1 - (rn**2 - r2**2) / gap2
    matrix = np.stack([col_step, col_bias], axis=1)
    return StepBiasSystem(matrix=matrix, rhs=rhs, row_steps=tuple(int(n) for n in rows))


def solve_step_bias_system(system: StepBiasSystem) -> StepBiasSolution:
    """Least-squares solve for [d^2, b] via the normal equations.

    Raises RankDeficientError when the 2x2 normal matrix is numerically
    singular. A non-positive d^2 is reported through ``feasible=False``
    rather than an exception so that pair ensembles can simply discard it.
    """
    a = system.matrix
    gram = a.T @ a
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > NORMAL_EQUATION_CONDITION_LIMIT:
        raise RankDeficientError("step/bias system is rank deficient")
    solution = np.linalg.solve(gram, a.T @ system.rhs)
    squared_step, bias = float(solution[0]), float(solution[1])
    residual = float(np.linalg.norm(a @ solution - system.rhs))
    return StepBiasSolution(
        squared_step_length=squared_step,
        bias=bias,
        residual=residual,
        feasible=squared_step > 0.0,
    )


def recover_along_track(step_length: float, bias: float, ranges, pair: ReferenceStepPair) -> float:
    """Closed-form q1: average the pairwise relations over both reference
    steps and every other valid step."""
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    r = np.asarray(ranges, dtype=float)
    valid = _valid_step_indices(r)
    terms = []
    for a in pair.as_tuple():
        ra = r[a - 1]
        ka = a - 1
        others = valid[valid != a]
        k = others - 1
        rn = r[others - 1]
        numerator = rn**2 - ra**2 - 2.0 * bias * (rn - ra) - (k**2 - ka**2) * step_length**2
        terms.append(numerator / (2.0 * (k - ka) * step_length))
    return float(np.mean(np.concatenate(terms)))


def recover_cross_track(step_length: float, bias: float, along_track: float, ranges) -> CrossTrackResult:
    """Recover |u1| by averaging per-step radicands.

    Each valid step contributes sqrt((r_n - b)^2 - (q1 + k_n*d)^2); under
    noise individual radicands may dip below zero near u1 ~ 0, so they are
    clamped at zero to keep the estimator continuous. When more than half
    the steps needed clamping the geometry is declared inconsistent.
    """
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    r = np.asarray(ranges, dtype=float)
    valid = _valid_step_indices(r)
    k = valid - 1
    rn = r[valid - 1]
    radicands = (rn - bias) ** 2 - (along_track + k * step_length) ** 2
    clamped = radicands < 0.0
    magnitude = float(np.mean(np.sqrt(np.clip(radicands, 0.0, None))))
    clamped_fraction = float(np.mean(clamped))
    return CrossTrackResult(
        magnitude=magnitude,
        clamped_fraction=clamped_fraction,
        feasible=clamped_fraction <= MAX_CLAMPED_FRACTION,
    )
