"""Shared domain types, units, and validation.

Conventions used throughout the package:
    - 2D global frame, meters; angles in radians.
    - Step indices are 1-based (step n = 1 is the first detected step).
    - A cumulative heading of 0 means "still walking in the initial
      direction"; the initial direction itself (omega) is unknown and is
      recovered during trajectory alignment.
    - Missing per-AP RTT values are represented as NaN entries in the RTT
      vector; an AP simply contributes fewer equations downstream.

All types are immutable value objects and safe to share between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

#: Propagation speed used to convert RTTs to distances (m/s). Fixed at
#: 3e8 rather than the exact SI value: the sub-0.07% difference is far below
#: meter-scale ranging errors and keeps round-number examples exact.
SPEED_OF_LIGHT = 3.0e8

#: Default angular tolerance (rad) below which a cumulative heading is
#: treated as "no turn" when classifying mobility.
DEFAULT_ANGLE_TOLERANCE = 1e-6

_HALF_PI = math.pi / 2.0


class PositioningError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMeasurementError(PositioningError, ValueError):
    """A measurement violates its physical preconditions (e.g. RTT <= 0)."""


class InfeasibleError(PositioningError):
    """A positioning sub-problem has no usable solution.

    ``condition`` carries a short machine-readable code naming the failed
    requirement so callers can report which stage gave up:

    =========================  ================================================
    code                       meaning
    =========================  ================================================
    min-steps                  fewer detected steps than the solver minimum
                               (4 for straight walks, 5 with turns)
    min-aps                    fewer feasible APs than alignment needs
                               (3 for straight walks, 2 with turns)
    rank-deficient             a least-squares system lost rank (degenerate
                               geometry or heading pattern)
    gamma-feasible-set-empty   no candidate bearing angle produced positive
                               step length and positive calibrated distances
    cross-track-imaginary      every cross-track radicand was negative
    no-feasible-pairs          every reference-step pair was discarded
    no-feasible-aps            every AP failed the feasibility filter
    =========================  ================================================
    """

    def __init__(self, condition: str, message: str, ap_id: int | None = None):
        self.condition = condition
        self.ap_id = ap_id
        if ap_id is not None:
            message = f"[AP {ap_id}] {message}"
        super().__init__(message)


class TooFewStepsError(InfeasibleError):
    def __init__(self, required: int, available: int, ap_id: int | None = None):
        self.required = required
        self.available = available
        super().__init__(
            "min-steps",
            f"need at least {required} steps with valid ranges, have {available}",
            ap_id=ap_id,
        )


class TooFewApsError(InfeasibleError):
    def __init__(self, required: int, available: int, message: str = ""):
        self.required = required
        self.available = available
        detail = message or f"need at least {required} feasible APs, have {available}"
        super().__init__("min-aps", detail)


class RankDeficientError(InfeasibleError):
    def __init__(self, message: str, ap_id: int | None = None):
        super().__init__("rank-deficient", message, ap_id=ap_id)


class UnderdeterminedSystemError(PositioningError):
    """The turning-walk system collapsed to rank 1 at this bearing angle.

    Distinct from :class:`InfeasibleError`: it does not mean the data are
    bad, only that this particular bearing angle admits infinitely many
    solutions and must be skipped by the search.
    """


class MobilityClass(enum.Enum):
    """Walk shape: straight line (no turns) or arbitrary (turns present)."""

    LINEAR = "linear"
    ARBITRARY = "arbitrary"


class TrajectoryVariant(enum.Enum):
    """Which mirror image of a relative trajectory a sequence represents."""

    UNIQUE = "unique"
    PLUS = "plus"
    MINUS = "minus"


def _as_vector2(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


@dataclass(frozen=True)
class ApDescriptor:
    """One WiFi AP: integer id and known 2D position (m, global frame)."""

    ap_id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vector2(self.position, "position"))


@dataclass(frozen=True)
class StepEvent:
    """One detected walking step.

    Attributes:
        index: 1-based step number n.
        timestamp: detection instant t_n (s).
        heading_change: direction change mu_n measured at this step (rad);
            0 when the user kept walking straight. The first step always
            has heading_change 0 by convention.
        cumulative_heading: theta_n = sum of heading changes up to and
            including this step (rad); 0 for the first step.
    """

    index: int
    timestamp: float
    heading_change: float
    cumulative_heading: float

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"step index must be >= 1, got {self.index}")
        for name in ("timestamp", "heading_change", "cumulative_heading"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def steps_from_heading_changes(timestamps, heading_changes) -> tuple[StepEvent, ...]:
    """Build a validated step sequence from timestamps and per-step turns.

    The first step's heading change is required to be 0 (the initial walking
    direction is the reference); cumulative headings are exact prefix sums.
    """
    times = np.asarray(timestamps, dtype=float)
    turns = np.asarray(heading_changes, dtype=float)
    if times.ndim != 1 or times.shape != turns.shape:
        raise ValueError("timestamps and heading_changes must be equal-length 1D")
    if times.size == 0:
        raise ValueError("empty step sequence")
    if turns[0] != 0.0:
        raise ValueError("first step must have zero heading change")
    if np.any(np.diff(times) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    cumulative = np.cumsum(turns)
    return tuple(
        StepEvent(
            index=i + 1,
            timestamp=float(times[i]),
            heading_change=float(turns[i]),
            cumulative_heading=float(cumulative[i]),
        )
        for i in range(times.size)
    )


def validate_step_sequence(steps) -> None:
    """Check the step-sequence invariants (indices, monotone time, prefix sums)."""
    if len(steps) == 0:
        raise ValueError("empty step sequence")
    if steps[0].heading_change != 0.0 or steps[0].cumulative_heading != 0.0:
        raise ValueError("first step must have zero heading change and heading")
    running = 0.0
    last_time = -math.inf
    for i, step in enumerate(steps):
        if step.index != i + 1:
            raise ValueError(f"step indices must be 1..N contiguous, got {step.index}")
        if step.timestamp <= last_time:
            raise ValueError("timestamps must be strictly increasing")
        last_time = step.timestamp
        running += step.heading_change
        if abs(step.cumulative_heading - running) > 1e-12:
            raise ValueError(
                f"cumulative heading of step {step.index} does not match "
                "the prefix sum of heading changes"
            )


def cumulative_headings(steps) -> np.ndarray:
    """Extract the theta_n sequence from step events as an array."""
    return np.array([s.cumulative_heading for s in steps], dtype=float)


@dataclass(frozen=True)
class MeasurementSet:
    """All measurements grouped at one step: the step event plus the per-AP
    RTT vector (s). NaN marks an AP that did not answer at this step."""

    step: StepEvent
    rtts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.rtts, dtype=float)
        if arr.ndim != 1:
            raise ValueError("rtts must be a 1D vector (one slot per AP)")
        present = arr[np.isfinite(arr)]
        if np.any(present <= 0):
            raise InvalidMeasurementError("RTT values must be positive")
        object.__setattr__(self, "rtts", arr)

    @property
    def num_aps(self) -> int:
        return self.rtts.shape[0]


@dataclass(frozen=True)
class RangeObservation:
    """Per-step propagation distances (m) derived from one RTT vector."""

    distances: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.distances, dtype=float)
        present = arr[np.isfinite(arr)]
        if np.any(present <= 0):
            raise InvalidMeasurementError("derived ranges must be positive")
        object.__setattr__(self, "distances", arr)

    @classmethod
    def from_measurement(cls, measurement: MeasurementSet) -> "RangeObservation":
        return cls(distances=rtt_to_range(measurement.rtts))


@dataclass(frozen=True)
class RangingEstimate:
    """Joint per-AP output of the ranging stage.

    ``z1`` is the user's first position in the AP-local frame (origin at the
    AP, X-axis along the unknown initial walking direction). For straight
    walks only the magnitude of the cross-track component is identifiable,
    so ``z1[1]`` is reported non-negative and ``linear_sign_ambiguous`` is
    set; alignment later decides the sign per AP.
    """

    ap_id: int
    step_length: float
    bias: float
    z1: np.ndarray
    linear_sign_ambiguous: bool
    feasible: bool

    def __post_init__(self):
        arr = np.asarray(self.z1, dtype=float)
        if arr.shape != (2,):
            raise ValueError("z1 must be a 2-vector")
        object.__setattr__(self, "z1", arr)


@dataclass(frozen=True)
class RelativeTrajectory:
    """User path in one AP's local frame; the unit of trajectory alignment."""

    ap_id: int
    points: np.ndarray  # (N, 2), meters
    variant: TrajectoryVariant = TrajectoryVariant.UNIQUE

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("points must have shape (N, 2)")
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TrajectoryEstimate:
    """Final global positions, recovered initial heading, contributing APs.

    Baseline multilateration results reuse the type with ``heading=None``;
    steps a baseline could not resolve hold NaN rows and are listed in
    ``unresolved_steps``.
    """

    positions: np.ndarray  # (N, 2), global meters
    heading: float | None
    contributing_aps: frozenset[int]
    unresolved_steps: tuple[int, ...] = field(default=())

    def __post_init__(self):
        arr = np.asarray(self.positions, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        object.__setattr__(self, "positions", arr)
        if self.heading is not None and not (0.0 <= self.heading < 2.0 * math.pi):
            raise ValueError("heading must be normalized to [0, 2*pi)")

    def __len__(self) -> int:
        return self.positions.shape[0]


def rtt_matrix(measurements) -> np.ndarray:
    """Stack per-step RTT vectors into an (N, M) matrix (NaN = missing)."""
    if len(measurements) == 0:
        raise ValueError("empty measurement sequence")
    width = measurements[0].num_aps
    rows = []
    for m in measurements:
        if m.num_aps != width:
            raise ValueError("all measurement sets must cover the same AP count")
        rows.append(m.rtts)
    return np.stack(rows)


def rtt_to_range(tau):
    """Convert round-trip time (s) to one-way propagation distance (m).

    The signal travels to the AP and back, so the distance is c * tau / 2.
    Accepts scalars or arrays; NaN entries (missing measurements) pass
    through unchanged. Non-positive values raise InvalidMeasurementError.
    """
    arr = np.asarray(tau, dtype=float)
    present = arr[np.isfinite(arr)] if arr.ndim else arr
    if arr.ndim == 0:
        if not np.isfinite(arr) or arr <= 0:
            raise InvalidMeasurementError(f"RTT must be positive, got {tau}")
        return float(SPEED_OF_LIGHT * arr / 2.0)
    if np.any(present <= 0):
        raise InvalidMeasurementError("RTT values must be positive")
    return SPEED_OF_LIGHT * arr / 2.0


def classify_mobility(steps, angle_tolerance: float = DEFAULT_ANGLE_TOLERANCE) -> MobilityClass:
    """Classify a walk as straight-line or turning from cumulative headings.

    A walk counts as linear only if every cumulative heading stays within
    ``angle_tolerance`` of zero.
    """
    if isinstance(steps, np.ndarray):
        headings = steps
    else:
        headings = cumulative_headings(steps)
    if headings.size == 0:
        raise ValueError("cannot classify an empty step sequence")
    if np.all(np.abs(headings) <= angle_tolerance):
        return MobilityClass.LINEAR
    return MobilityClass.ARBITRARY


def quantize_heading(heading_change: float) -> float:
    """Snap a measured heading change to the nearest quarter-turn.

    Indoor walking directions are constrained by corridors and walls, so
    turns are effectively multiples of 90 degrees; snapping removes gyro
    noise. Equivalent levels differing by a full turn are kept as measured
    (e.g. -pi/2 is reported as -pi/2, not 3*pi/2). Idempotent.
    """
    if not math.isfinite(heading_change):
        raise ValueError("heading change must be finite")
    return round(heading_change / _HALF_PI) * _HALF_PI


def quantize_heading_sequence(heading_changes) -> np.ndarray:
    """Vectorized :func:`quantize_heading` over a turn sequence."""
    arr = np.asarray(heading_changes, dtype=float)
    return np.round(arr / _HALF_PI) * _HALF_PI
