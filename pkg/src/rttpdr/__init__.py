"""WiFi RTT + pedestrian dead reckoning positioning toolkit.

Fuses per-step WiFi round-trip-time ranges from multiple APs with step and
heading-change events: jointly estimates each AP's constant range bias and
the user's step length from geometric systems of equations, then recovers
the absolute trajectory by rotating every AP-local relative trajectory
into agreement (trajectory alignment). Ships with a synthetic-measurement
simulator used as the verification oracle and with per-step
multilateration baselines for comparison.
"""

from .alignment import (
    AlignmentSolution,
    OmegaSearchConfig,
    align_arbitrary,
    align_linear,
    alignment_error,
    average_fix,
    derive_relative_trajectories,
    filter_feasible,
    resolve_mirror_signs,
)
from .baselines import multilaterate, run_baseline_no_ta, run_baseline_raw
from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    PairOutcome,
    default_candidate_count,
    estimate_ap,
    median,
    run_reference_pairs,
    select_candidates,
)
from .geometry import (
    DirectionAccumulators,
    accumulate_directions,
    local_to_global,
    normalize_angle,
    propagate_trajectory,
    rotate,
    rotation_matrix,
)
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    RangingStage,
    run_alignment_stage,
    run_positioning,
    run_ranging_stage,
)
from .ranging_arbitrary import (
    GammaScan,
    GammaSearchConfig,
    GammaSearchResult,
    build_gamma_system,
    direction_projection,
    radius_consistency_cost,
    search_gamma,
    search_gamma_batch,
    solve_gamma_system,
    solve_initial_position,
)
from .ranging_linear import (
    CrossTrackResult,
    ReferenceStepPair,
    StepBiasSolution,
    StepBiasSystem,
    build_step_bias_system,
    recover_along_track,
    recover_cross_track,
    solve_step_bias_system,
)
from .simulator import (
    ErrorReport,
    GroundTruth,
    ScenarioConfig,
    evaluate,
    generate_measurements,
    generate_truth,
    nlos_site_scenario,
    random_scenario,
    sample_biases,
)
from .types import (
    ApDescriptor,
    InfeasibleError,
    InvalidMeasurementError,
    MeasurementSet,
    MobilityClass,
    PositioningError,
    RangeObservation,
    RangingEstimate,
    RankDeficientError,
    RelativeTrajectory,
    SPEED_OF_LIGHT,
    StepEvent,
    TooFewApsError,
    TooFewStepsError,
    TrajectoryEstimate,
    TrajectoryVariant,
    UnderdeterminedSystemError,
    classify_mobility,
    quantize_heading,
    rtt_to_range,
    steps_from_heading_changes,
)

__version__ = "0.1.0"
