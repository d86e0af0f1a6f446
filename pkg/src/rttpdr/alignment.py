"""Trajectory alignment: from per-AP relative trajectories to one fix.

Each AP's ranging stage yields the user's path in that AP's local frame
(origin at the AP, X-axis along the unknown initial walking direction).
Rotating a local path by the true initial heading and translating by the
AP position must reproduce the same global path for every AP, so the
heading is found by minimizing the total pairwise disagreement

    e(omega) = sum over AP pairs, sum over steps,
               || p_n^(i)(omega) - p_n^(j)(omega) ||

over [0, 2*pi). For straight walks each AP contributes two mirror-image
candidates; relative signs between APs are first fixed by comparing
inter-trajectory distances against inter-AP distances (for correctly
signed trajectories the two are equal at every step), leaving a single
global two-way ambiguity that the heading search resolves as long as at
least three APs are not collinear. Turning walks have no mirror ambiguity
and two APs suffice.

The aligned per-AP trajectories are averaged into the final position fix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

import numpy as np
from ._optim import zoom_minimize
from .geometry import (
    DirectionAccumulators,
    TWO_PI,
    local_to_global,
    normalize_angle,
    propagate_trajectory,
)
from .types import (
    MobilityClass,
    RangingEstimate,
    RelativeTrajectory,
    TooFewApsError,
    TrajectoryEstimate,
    TrajectoryVariant,
)

MIN_APS_ARBITRARY = 2
MIN_APS_LINEAR = 3

#: Largest triangle area (m^2) below which an AP constellation counts as
#: collinear, leaving the straight-walk mirror symmetry unbroken.
COLLINEAR_AREA_EPS = 1e-6


@dataclass(frozen=True)
class OmegaSearchConfig:
    """Heading-search settings: grid size over [0, 2*pi) and the local
    refinement tolerance (None disables refinement)."""

    grid_size: int = 4096
    refine_tol: float | None = 1e-8

    def __post_init__(self):
        if self.grid_size < 8:
            raise ValueError("grid_size must be at least 8")
        if self.refine_tol is not None and self.refine_tol <= 0:
            raise ValueError("refine_tol must be positive or None")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, TWO_PI, self.grid_size, endpoint=False)


@dataclass(frozen=True)
class AlignmentSolution:
    """Heading search outcome plus the aligned global trajectories."""

    omega: float
    error: float
    global_trajectories: dict[int, np.ndarray]
    reference_ap: int | None = None
    hypothesis: TrajectoryVariant | None = None
    sign_choices: dict[int, TrajectoryVariant] | None = None
    collinear_warning: bool = False


def derive_relative_trajectories(
    estimate: RangingEstimate,
    accumulators: DirectionAccumulators,
    mobility: MobilityClass,
) -> tuple[RelativeTrajectory, ...]:
    """Unroll an AP's relative trajectory from its ranging estimate.

    Turning walks give one trajectory; straight walks give the two mirror
    images (cross-track +|u1| and -|u1|), whose range sequences to the AP
    are identical.
    """
    if not estimate.feasible:
        raise ValueError(f"AP {estimate.ap_id}: cannot derive trajectory from an infeasible estimate")
    if mobility is MobilityClass.ARBITRARY:
        points = propagate_trajectory(estimate.z1, estimate.step_length, accumulators)
        return (RelativeTrajectory(estimate.ap_id, points, TrajectoryVariant.UNIQUE),)
    n = len(accumulators)
    along = estimate.z1[0] + estimate.step_length * np.arange(n, dtype=float)
    magnitude = abs(estimate.z1[1])
    plus = np.stack([along, np.full(n, magnitude)], axis=1)
    minus = np.stack([along, np.full(n, -magnitude)], axis=1)
    return (
        RelativeTrajectory(estimate.ap_id, plus, TrajectoryVariant.PLUS),
        RelativeTrajectory(estimate.ap_id, minus, TrajectoryVariant.MINUS),
    )


def filter_feasible(
    estimates: Mapping[int, RangingEstimate], ranges_by_ap: Mapping[int, np.ndarray]
) -> frozenset[int]:
    """APs whose estimates can contribute to alignment: positive step
    length, positive calibrated distances, and real first position."""
    if not estimates:
        raise ValueError("no estimates to filter")
    feasible = set()
    for ap_id, estimate in estimates.items():
        r = np.asarray(ranges_by_ap[ap_id], dtype=float)
        present = r[np.isfinite(r)]
        if present.size == 0 or not np.all(np.isfinite(estimate.z1)):
            continue
        if not math.isfinite(estimate.step_length) or estimate.step_length <= 0:
            continue
        if not math.isfinite(estimate.bias) or np.min(present) - estimate.bias <= 0:
            continue
        feasible.add(ap_id)
    return frozenset(feasible)


class _OmegaObjective:
    """Pairwise-disagreement objective, reduced to per-(pair, step) cosine
    coefficients so one heading evaluation is a single sqrt-and-sum."""

    def __init__(self, trajectories: list[np.ndarray], positions: list[np.ndarray]):
        terms_a, terms_b, terms_c = [], [], []
        for i, j in combinations(range(len(trajectories)), 2):
            u = positions[i] - positions[j]
            v = trajectories[i] - trajectories[j]  # (N, 2)
            terms_a.append(np.full(v.shape[0], u @ u) + np.sum(v * v, axis=1))
            terms_b.append(2.0 * (u[0] * v[:, 0] + u[1] * v[:, 1]))
            terms_c.append(2.0 * (u[1] * v[:, 0] - u[0] * v[:, 1]))
        self._a = np.concatenate(terms_a)
        self._b = np.concatenate(terms_b)
        self._c = np.concatenate(terms_c)

    def value(self, omega: float) -> float:
        squared = self._a + self._b * math.cos(omega) + self._c * math.sin(omega)
        return float(np.sum(np.sqrt(np.clip(squared, 0.0, None))))

    def grid_values(self, omegas: np.ndarray, chunk: int = 512) -> np.ndarray:
        out = np.empty(omegas.size)
        for start in range(0, omegas.size, chunk):
            block = omegas[start : start + chunk]
            squared = (
                self._a[:, None]
                + self._b[:, None] * np.cos(block)
                + self._c[:, None] * np.sin(block)
            )
            out[start : start + chunk] = np.sum(np.sqrt(np.clip(squared, 0.0, None)), axis=0)
        return out


def alignment_error(
    trajectories: Mapping[int, RelativeTrajectory | np.ndarray],
    ap_positions: Mapping[int, np.ndarray],
    omega: float,
) -> float:
    """Total pairwise trajectory disagreement at one heading (unordered AP
    pairs counted once)."""
    if len(trajectories) < 2:
        raise ValueError("alignment error needs at least two trajectories")
    ids = sorted(trajectories)
    points = [_points_of(trajectories[m]) for m in ids]
    positions = [np.asarray(ap_positions[m], dtype=float) for m in ids]
    return _OmegaObjective(points, positions).value(omega)


def _points_of(trajectory) -> np.ndarray:
    if isinstance(trajectory, RelativeTrajectory):
        return trajectory.points
    return np.asarray(trajectory, dtype=float)


def _search_omega(objective: _OmegaObjective, config: OmegaSearchConfig) -> tuple[float, float]:
    omegas = config.grid()
    values = objective.grid_values(omegas)
    best_cell = int(np.argmin(values))
    best = (float(values[best_cell]), float(omegas[best_cell]))
    if config.refine_tol is not None:
        spacing = TWO_PI / config.grid_size
        center = omegas[best_cell]
        refined_x, refined_f = zoom_minimize(
            lambda block: objective.grid_values(np.mod(block, TWO_PI)),
            center - spacing,
            center + spacing,
            tol=config.refine_tol,
        )
        if refined_f < best[0]:
            best = (refined_f, refined_x)
    return normalize_angle(best[1]), best[0]


def align_arbitrary(
    trajectories: Mapping[int, RelativeTrajectory],
    ap_positions: Mapping[int, np.ndarray],
    config: OmegaSearchConfig | None = None,
) -> AlignmentSolution:
    """Heading search for turning walks (unique trajectory per AP)."""
    config = config or OmegaSearchConfig()
    ids = sorted(trajectories)
    if len(ids) < MIN_APS_ARBITRARY:
        raise TooFewApsError(required=MIN_APS_ARBITRARY, available=len(ids))
    points = [_points_of(trajectories[m]) for m in ids]
    positions = [np.asarray(ap_positions[m], dtype=float) for m in ids]
    omega, error = _search_omega(_OmegaObjective(points, positions), config)
    globals_ = {
        m: local_to_global(pts, pos, omega)
        for m, pts, pos in zip(ids, points, positions)
    }
    return AlignmentSolution(omega=omega, error=error, global_trajectories=globals_)


def mirror_deviation(
    reference_traj: np.ndarray, other_traj: np.ndarray, ap_gap: float
) -> float:
    """Aggregate deviation between inter-trajectory and inter-AP distance.

    Zero (up to rounding) exactly when the two trajectories carry
    consistent mirror signs; summing |deviation| over steps keeps the
    comparison usable under noise where per-step equality never holds.
    """
    gaps = np.linalg.norm(reference_traj - other_traj, axis=1)
    return float(np.sum(np.abs(ap_gap - gaps)))


def resolve_mirror_signs(
    trajectory_pairs: Mapping[int, tuple[RelativeTrajectory, RelativeTrajectory]],
    ap_positions: Mapping[int, np.ndarray],
    reference: int,
) -> tuple[dict[int, RelativeTrajectory], dict[int, RelativeTrajectory]]:
    """Build the two sign-consistent trajectory sets for a reference AP.

    The "plus" hypothesis fixes the reference AP to its +cross-track
    variant; every other AP joins with whichever variant keeps its distance
    to the reference trajectory equal to the AP separation. The "minus"
    hypothesis is the global mirror (all variants flipped). With collinear
    APs the two hypotheses stay exactly symmetric and cannot be told apart
    downstream.
    """
    plus_ref, minus_ref = trajectory_pairs[reference]
    ref_position = np.asarray(ap_positions[reference], dtype=float)
    plus_set = {reference: plus_ref}
    minus_set = {reference: minus_ref}
    for ap_id, (plus_other, minus_other) in trajectory_pairs.items():
        if ap_id == reference:
            continue
        gap = float(np.linalg.norm(ref_position - np.asarray(ap_positions[ap_id], dtype=float)))
        same_sign = mirror_deviation(plus_ref.points, plus_other.points, gap)
        opposite = mirror_deviation(minus_ref.points, plus_other.points, gap)
        if same_sign <= opposite:
            plus_set[ap_id] = plus_other
            minus_set[ap_id] = minus_other
        else:
            plus_set[ap_id] = minus_other
            minus_set[ap_id] = plus_other
    return plus_set, minus_set


def aps_collinear(positions: list[np.ndarray]) -> bool:
    """True when no AP triple spans a triangle larger than the threshold."""
    if len(positions) < 3:
        return True
    largest = 0.0
    for p1, p2, p3 in combinations(positions, 3):
        area = 0.5 * abs(
            (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1])
        )
        largest = max(largest, area)
    return largest < COLLINEAR_AREA_EPS


def align_linear(
    trajectory_pairs: Mapping[int, tuple[RelativeTrajectory, RelativeTrajectory]],
    ap_positions: Mapping[int, np.ndarray],
    config: OmegaSearchConfig | None = None,
) -> AlignmentSolution:
    """Heading search for straight walks with mirror-sign resolution.

    Every feasible AP is tried as the sign reference; each of its two
    hypotheses is scored by its best-heading disagreement, and the overall
    minimum wins (ties: smallest reference id, then the plus hypothesis).
    """
    config = config or OmegaSearchConfig()
    ids = sorted(trajectory_pairs)
    if len(ids) < MIN_APS_LINEAR:
        raise TooFewApsError(required=MIN_APS_LINEAR, available=len(ids))
    positions = {m: np.asarray(ap_positions[m], dtype=float) for m in ids}
    collinear = aps_collinear([positions[m] for m in ids])

    cache: dict[tuple, tuple[float, float]] = {}
    best = None
    for reference in ids:
        hypotheses = resolve_mirror_signs(trajectory_pairs, positions, reference)
        for hyp_index, assignment in enumerate(hypotheses):
            signature = tuple((m, assignment[m].variant) for m in ids)
            if signature not in cache:
                objective = _OmegaObjective(
                    [assignment[m].points for m in ids], [positions[m] for m in ids]
                )
                cache[signature] = _search_omega(objective, config)
            omega, error = cache[signature]
            key = (error, reference, hyp_index)
            if best is None or key < best[0]:
                best = (key, omega, assignment)
    (error, reference, hyp_index), omega, assignment = best
    globals_ = {
        m: local_to_global(assignment[m].points, positions[m], omega) for m in ids
    }
    return AlignmentSolution(
        omega=omega,
        error=error,
        global_trajectories=globals_,
        reference_ap=reference,
        hypothesis=TrajectoryVariant.PLUS if hyp_index == 0 else TrajectoryVariant.MINUS,
        sign_choices={m: assignment[m].variant for m in ids},
        collinear_warning=collinear,
    )


def average_fix(
    global_trajectories: Mapping[int, np.ndarray], heading: float | None
) -> TrajectoryEstimate:
    """Average the aligned per-AP global trajectories into the final fix."""
    if not global_trajectories:
        raise ValueError("no trajectories to average")
    ids = sorted(global_trajectories)
    stacked = np.stack([np.asarray(global_trajectories[m], dtype=float) for m in ids])
    return TrajectoryEstimate(
        positions=stacked.mean(axis=0),
        heading=None if heading is None else normalize_angle(heading),
        contributing_aps=frozenset(ids),
    )
