"""End-to-end positioning: measurements in, global trajectory out.

Stages: classify the walk shape from the heading history, jointly estimate
each AP's range bias and the user's step length with the reference-step
ensemble, drop APs whose estimates fail the feasibility conditions, align
the surviving relative trajectories by searching the initial heading, and
average the aligned trajectories into the final fix.

The ranging stage is exposed separately so benchmark comparisons can feed
the same per-AP estimates to the bias-compensated multilateration baseline
without re-running the ensembles.

Failures surface with the condition that broke: too few steps for the
solvers, too few feasible APs for alignment, or per-AP conditions recorded
in ``failures`` when other APs could still carry the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alignment import (
    AlignmentSolution,
    MIN_APS_ARBITRARY,
    MIN_APS_LINEAR,
    OmegaSearchConfig,
    align_arbitrary,
    align_linear,
    average_fix,
    derive_relative_trajectories,
    filter_feasible,
)
from .ensemble import EnsembleConfig, run_reference_pairs
from .geometry import DirectionAccumulators, accumulate_directions
from .types import (
    ApDescriptor,
    DEFAULT_ANGLE_TOLERANCE,
    InfeasibleError,
    MeasurementSet,
    MobilityClass,
    RangingEstimate,
    TooFewApsError,
    TooFewStepsError,
    TrajectoryEstimate,
    quantize_heading_sequence,
    rtt_matrix,
    rtt_to_range,
)


@dataclass(frozen=True)
class PipelineConfig:
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    omega: OmegaSearchConfig = field(default_factory=OmegaSearchConfig)
    quantize_heading: bool = False
    angle_tolerance: float = DEFAULT_ANGLE_TOLERANCE


@dataclass(frozen=True)
class RangingStage:
    """Per-AP joint estimates plus everything alignment needs."""

    mobility: MobilityClass
    accumulators: DirectionAccumulators
    ranges: np.ndarray  # (N, M)
    per_ap: dict[int, RangingEstimate]
    failures: dict[int, str]

    def ranges_for(self, aps: Sequence[ApDescriptor]) -> dict[int, np.ndarray]:
        return {ap.ap_id: self.ranges[:, column] for column, ap in enumerate(aps)}


@dataclass(frozen=True)
class PipelineResult:
    estimate: TrajectoryEstimate
    mobility: MobilityClass
    per_ap: dict[int, RangingEstimate]
    feasible_aps: frozenset[int]
    alignment: AlignmentSolution
    failures: dict[int, str]


def _headings_from_measurements(
    measurements: Sequence[MeasurementSet], quantize: bool
) -> np.ndarray:
    turns = np.array([m.step.heading_change for m in measurements], dtype=float)
    if quantize:
        turns = quantize_heading_sequence(turns)
        turns[0] = 0.0
        return np.cumsum(turns)
    return np.array([m.step.cumulative_heading for m in measurements], dtype=float)


def run_ranging_stage(
    aps: Sequence[ApDescriptor],
    measurements: Sequence[MeasurementSet],
    config: PipelineConfig | None = None,
) -> RangingStage:
    """Classify the walk and estimate (step length, bias, z1) per AP."""
    config = config or PipelineConfig()
    if not measurements:
        raise ValueError("no measurements")
    if measurements[0].num_aps != len(aps):
        raise ValueError(
            f"measurement vectors cover {measurements[0].num_aps} APs, "
            f"but {len(aps)} APs were declared"
        )
    ids = [ap.ap_id for ap in aps]
    if len(set(ids)) != len(ids):
        raise ValueError("AP ids must be unique")

    headings = _headings_from_measurements(measurements, config.quantize_heading)
    mobility = (
        MobilityClass.LINEAR
        if np.all(np.abs(headings) <= config.angle_tolerance)
        else MobilityClass.ARBITRARY
    )
    accumulators = accumulate_directions(headings)
    ranges = rtt_to_range(rtt_matrix(measurements))

    per_ap: dict[int, RangingEstimate] = {}
    failures: dict[int, str] = {}
    step_errors: list[TooFewStepsError] = []
    for column, ap in enumerate(aps):
        try:
            result = run_reference_pairs(
                ap.ap_id, ranges[:, column], accumulators, mobility, config.ensemble
            )
        except TooFewStepsError as err:
            failures[ap.ap_id] = err.condition
            step_errors.append(err)
            continue
        except InfeasibleError as err:
            failures[ap.ap_id] = err.condition
            continue
        per_ap[ap.ap_id] = result.estimate
        if not result.estimate.feasible:
            failures[ap.ap_id] = "no-feasible-pairs"

    if not per_ap and step_errors and len(step_errors) == len(aps):
        raise step_errors[0]
    return RangingStage(
        mobility=mobility,
        accumulators=accumulators,
        ranges=ranges,
        per_ap=per_ap,
        failures=failures,
    )


def run_alignment_stage(
    aps: Sequence[ApDescriptor],
    stage: RangingStage,
    config: PipelineConfig | None = None,
) -> tuple[TrajectoryEstimate, AlignmentSolution, frozenset[int]]:
    """Filter feasible APs, resolve the heading, and average the fix."""
    config = config or PipelineConfig()
    feasible = (
        filter_feasible(stage.per_ap, stage.ranges_for(aps)) if stage.per_ap else frozenset()
    )
    required = (
        MIN_APS_LINEAR if stage.mobility is MobilityClass.LINEAR else MIN_APS_ARBITRARY
    )
    if len(feasible) < required:
        raise TooFewApsError(required=required, available=len(feasible))

    positions = {ap.ap_id: ap.position for ap in aps}
    if stage.mobility is MobilityClass.ARBITRARY:
        trajectories = {
            m: derive_relative_trajectories(stage.per_ap[m], stage.accumulators, stage.mobility)[0]
            for m in feasible
        }
        solution = align_arbitrary(trajectories, positions, config.omega)
    else:
        pairs = {
            m: derive_relative_trajectories(stage.per_ap[m], stage.accumulators, stage.mobility)
            for m in feasible
        }
        solution = align_linear(pairs, positions, config.omega)
    estimate = average_fix(solution.global_trajectories, solution.omega)
    return estimate, solution, feasible


def run_positioning(
    aps: Sequence[ApDescriptor],
    measurements: Sequence[MeasurementSet],
    config: PipelineConfig | None = None,
) -> PipelineResult:
    """Run the full pipeline on one walk's measurements."""
    config = config or PipelineConfig()
    stage = run_ranging_stage(aps, measurements, config)
    estimate, solution, feasible = run_alignment_stage(aps, stage, config)
    return PipelineResult(
        estimate=estimate,
        mobility=stage.mobility,
        per_ap=stage.per_ap,
        feasible_aps=feasible,
        alignment=solution,
        failures=stage.failures,
    )
