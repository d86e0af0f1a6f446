"""Synthetic scenario generation: the oracle the estimators are tested against.

Ground truth follows the same walk model the estimators assume — constant
step length, per-step heading changes, and per-AP ranges equal to true
distance plus a constant bias — with optional i.i.d. Gaussian corruption
of ranges and heading changes. The noise model is a choice of this
simulator (real FTM error statistics are site-dependent); the estimation
pipeline itself assumes nothing about the distribution.

Randomness discipline: every scenario seed deterministically derives one
substream per AP (range noise) and one for heading noise, so regenerating
a scenario is bit-identical and adding an AP never perturbs the streams of
the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .types import (
    ApDescriptor,
    MeasurementSet,
    MobilityClass,
    SPEED_OF_LIGHT,
    StepEvent,
    TrajectoryEstimate,
    quantize_heading_sequence,
)

#: Seconds between consecutive step detections in generated timestamps.
STEP_INTERVAL = 0.5

_RESAMPLE_LIMIT = 100


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of a synthetic walk and its measurement corruption."""

    aps: tuple[ApDescriptor, ...]
    biases: tuple[float, ...]  # constant per-AP range bias (m)
    step_length: float
    heading: float  # initial walking direction omega (rad)
    start: np.ndarray  # first position p_1 (m)
    turns: np.ndarray  # per-step heading changes mu_n (rad); turns[0] == 0
    range_noise_sigma: float = 0.0
    heading_noise_sigma: float = 0.0
    # NLOS-heavy environments corrupt a fraction of individual exchanges
    # with gross positive detour errors on top of the Gaussian noise; 0
    # disables the mixture.
    outlier_fraction: float = 0.0
    outlier_low: float = 2.0
    outlier_high: float = 8.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "turns", np.asarray(self.turns, dtype=float))
        object.__setattr__(self, "biases", tuple(float(b) for b in self.biases))
        if self.step_length <= 0:
            raise ValueError("step length must be positive")
        if len(self.biases) != len(self.aps):
            raise ValueError("need one bias per AP")
        if any(b < 0 for b in self.biases):
            raise ValueError("biases must be non-negative")
        if self.turns.ndim != 1 or self.turns.size < 1:
            raise ValueError("turns must be a 1D array with one entry per step")
        if self.turns[0] != 0.0:
            raise ValueError("the first step cannot carry a heading change")
        if self.range_noise_sigma < 0 or self.heading_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier fraction must lie in [0, 1]")
        if self.outlier_low < 0 or self.outlier_high < self.outlier_low:
            raise ValueError("need 0 <= outlier_low <= outlier_high")

    @property
    def num_steps(self) -> int:
        return self.turns.size

    @property
    def num_aps(self) -> int:
        return len(self.aps)

    @property
    def mobility(self) -> MobilityClass:
        if np.all(np.cumsum(self.turns) == 0.0):
            return MobilityClass.LINEAR
        return MobilityClass.ARBITRARY

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GroundTruth:
    positions: np.ndarray  # (N, 2) global
    cumulative_headings: np.ndarray  # theta_n (N,)
    true_ranges: np.ndarray  # (N, M) unbiased distances

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ErrorReport:
    """Per-step positioning errors plus the summary statistics."""

    per_step: np.ndarray
    min: float
    max: float
    mean: float
    median: float
    std: float
    resolved_steps: int

    def as_dict(self) -> dict[str, float]:
        return {
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "median": self.median,
            "std": self.std,
        }


def generate_truth(config: ScenarioConfig) -> GroundTruth:
    """Walk the ground-truth trajectory and compute per-AP true distances."""
    headings = np.cumsum(config.turns)
    n = config.num_steps
    positions = np.empty((n, 2))
    positions[0] = config.start
    step_angles = config.heading + headings[:-1]
    deltas = config.step_length * np.stack(
        [np.cos(step_angles), np.sin(step_angles)], axis=1
    )
    positions[1:] = config.start + np.cumsum(deltas, axis=0)
    ap_matrix = np.stack([ap.position for ap in config.aps])
    distances = np.linalg.norm(positions[:, None, :] - ap_matrix[None, :, :], axis=2)
    return GroundTruth(
        positions=positions, cumulative_headings=headings, true_ranges=distances
    )


def _range_rng(seed: int, ap_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, ap_index)))


def _heading_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, 0)))


def generate_measurements(
    config: ScenarioConfig,
    truth: GroundTruth | None = None,
    quantize: bool = False,
) -> list[MeasurementSet]:
    """Corrupt the ground truth into per-step measurement sets.

    Ranges become distance + bias + Gaussian noise (negative draws are
    resampled a bounded number of times, then rejected) and are reported as
    RTTs. Heading changes receive Gaussian noise on every step after the
    first and are optionally snapped to quarter turns.
    """
    truth = truth or generate_truth(config)
    n, m = truth.true_ranges.shape

    ranges = np.empty((n, m))
    for ap_index in range(m):
        rng = _range_rng(config.seed, ap_index)
        values = truth.true_ranges[:, ap_index] + config.biases[ap_index]
        if config.outlier_fraction > 0:
            hit = rng.random(n) < config.outlier_fraction
            values = values + hit * rng.uniform(
                config.outlier_low, config.outlier_high, size=n
            )
        if config.range_noise_sigma > 0:
            values = values + rng.normal(0.0, config.range_noise_sigma, size=n)
            for _ in range(_RESAMPLE_LIMIT):
                bad = values <= 0
                if not np.any(bad):
                    break
                values[bad] = (
                    truth.true_ranges[bad, ap_index]
                    + config.biases[ap_index]
                    + rng.normal(0.0, config.range_noise_sigma, size=int(bad.sum()))
                )
            else:
                raise ValueError(
                    f"AP {config.aps[ap_index].ap_id}: could not draw positive ranges"
                )
        ranges[:, ap_index] = values

    turns = config.turns.copy()
    if config.heading_noise_sigma > 0 and n > 1:
        turns[1:] = turns[1:] + _heading_rng(config.seed).normal(
            0.0, config.heading_noise_sigma, size=n - 1
        )
    if quantize:
        turns = quantize_heading_sequence(turns)
        turns[0] = 0.0
    headings = np.cumsum(turns)

    rtts = 2.0 * ranges / SPEED_OF_LIGHT
    measurements = []
    for i in range(n):
        step = StepEvent(
            index=i + 1,
            timestamp=i * STEP_INTERVAL,
            heading_change=float(turns[i]),
            cumulative_heading=float(headings[i]),
        )
        measurements.append(MeasurementSet(step=step, rtts=rtts[i]))
    return measurements


def sample_biases(
    seed: int, count: int, low: float, high: float, overrides: dict[int, float] | None = None
) -> tuple[float, ...]:
    """Draw per-AP biases uniformly from [low, high] (LOS/NLOS mix); explicit
    per-index overrides win."""
    if low < 0 or high < low:
        raise ValueError("need 0 <= low <= high")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2, 0)))
    values = rng.uniform(low, high, size=count)
    if overrides:
        for index, value in overrides.items():
            values[index] = value
    return tuple(float(v) for v in values)


def evaluate(estimate: TrajectoryEstimate | np.ndarray, truth: GroundTruth) -> ErrorReport:
    """Per-step Euclidean errors against ground truth plus summary stats.

    Steps with NaN estimates (unresolved baseline steps) are excluded from
    the summary; their per-step entries stay NaN.
    """
    positions = (
        estimate.positions
        if isinstance(estimate, TrajectoryEstimate)
        else np.asarray(estimate, dtype=float)
    )
    if positions.shape != truth.positions.shape:
        raise ValueError(
            f"trajectory length mismatch: estimate {positions.shape}, truth {truth.positions.shape}"
        )
    errors = np.linalg.norm(positions - truth.positions, axis=1)
    resolved = errors[np.isfinite(errors)]
    if resolved.size == 0:
        raise ValueError("no resolved steps to evaluate")
    return ErrorReport(
        per_step=errors,
        min=float(np.min(resolved)),
        max=float(np.max(resolved)),
        mean=float(np.mean(resolved)),
        median=float(np.median(resolved)),
        std=float(np.std(resolved)),
        resolved_steps=int(resolved.size),
    )


def random_scenario(
    seed: int,
    mobility: MobilityClass = MobilityClass.ARBITRARY,
    num_steps: int | None = None,
    num_aps: int | None = None,
    range_noise_sigma: float = 0.0,
    heading_noise_sigma: float = 0.0,
    bias_low: float = 0.5,
    bias_high: float = 4.0,
    step_bounds: tuple[int, int] = (5, 80),
    ap_bounds: tuple[int, int] = (2, 10),
) -> ScenarioConfig:
    """Draw a random, generically placed scenario for tests and demos.

    Keeps the geometry away from degenerate configurations: APs stay clear
    of the walked path, straight-walk constellations are non-collinear and
    off the walking line, and turning walks always include at least one
    quarter turn that actually bends the path.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3, 0)))
    if num_steps is None:
        low = max(step_bounds[0], 4 if mobility is MobilityClass.LINEAR else 5)
        num_steps = int(rng.integers(low, step_bounds[1] + 1))
    if num_aps is None:
        low = max(ap_bounds[0], 3 if mobility is MobilityClass.LINEAR else 2)
        num_aps = int(rng.integers(low, ap_bounds[1] + 1))

    step_length = float(rng.uniform(0.55, 0.85))
    heading = float(rng.uniform(0.0, 2.0 * math.pi))
    start = rng.uniform(-5.0, 5.0, size=2)

    turns = np.zeros(num_steps)
    if mobility is MobilityClass.ARBITRARY:
        if num_steps < 3:
            raise ValueError("turning walks need at least 3 steps")
        count = max(1, num_steps // 10)
        slots = rng.choice(np.arange(1, num_steps - 1), size=min(count, num_steps - 2), replace=False)
        turns[slots] = rng.choice([-math.pi / 2.0, math.pi / 2.0], size=slots.size)

    probe = ScenarioConfig(
        aps=(ApDescriptor(1, (0.0, 0.0)),),
        biases=(0.0,),
        step_length=step_length,
        heading=heading,
        start=start,
        turns=turns,
        seed=seed,
    )
    path = generate_truth(probe).positions
    center = path.mean(axis=0)
    span = max(10.0, float(np.max(np.linalg.norm(path - center, axis=1))) + 8.0)

    direction = np.array([math.cos(heading), math.sin(heading)])
    normal = np.array([-direction[1], direction[0]])
    positions: list[np.ndarray] = []
    while len(positions) < num_aps:
        candidate = center + rng.uniform(-span, span, size=2)
        if np.min(np.linalg.norm(path - candidate, axis=1)) < 1.5:
            continue
        # Keep the local bearing of the start position away from multiples
        # of a quarter turn: at those bearings an AP's mirror image folds
        # onto (or right next to) the true solution and the geometry stops
        # being generic.
        offset = candidate - start
        bearing = math.atan2(offset @ normal, offset @ direction) % (math.pi / 2.0)
        if min(bearing, math.pi / 2.0 - bearing) < 0.02:
            continue
        if abs(offset @ normal) < 1.5:
            continue  # nearly on the walking line: cross-track ~ 0
        if mobility is MobilityClass.LINEAR:
            if len(positions) >= 2:
                trial = positions + [candidate]
                areas = [
                    0.5
                    * abs(
                        (p2[0] - p1[0]) * (p3[1] - p1[1])
                        - (p3[0] - p1[0]) * (p2[1] - p1[1])
                    )
                    for p1, p2, p3 in _triples(trial)
                ]
                if max(areas) < 4.0 and len(trial) == 3:
                    continue
        positions.append(candidate)

    aps = tuple(ApDescriptor(i + 1, pos) for i, pos in enumerate(positions))
    biases = tuple(float(b) for b in rng.uniform(bias_low, bias_high, size=num_aps))
    return ScenarioConfig(
        aps=aps,
        biases=biases,
        step_length=step_length,
        heading=heading,
        start=start,
        turns=turns,
        range_noise_sigma=range_noise_sigma,
        heading_noise_sigma=heading_noise_sigma,
        seed=seed,
    )


def _triples(points):
    from itertools import combinations

    return combinations(points, 3)


def nlos_site_scenario(
    seed: int,
    num_steps: int = 70,
    num_aps: int = 10,
    range_noise_sigma: float = 0.5,
    heading_noise_sigma: float = 0.0,
    bias_low: float = 1.0,
    bias_high: float = 5.0,
    outlier_fraction: float = 0.12,
    outlier_low: float = 2.0,
    outlier_high: float = 6.0,
    ap_clearance: tuple[float, float] = (1.5, 6.0),
) -> ScenarioConfig:
    """Draw one scenario of the NLOS-heavy benchmark site.

    Models a dense indoor deployment: a lattice walk turning every few
    steps, APs scattered close around the path (every AP within a few
    meters of it), per-AP detour biases, Gaussian ranging noise, and a
    fraction of grossly detoured individual exchanges. The close spacing
    keeps the joint bias/step estimation well conditioned at this noise
    level; the gross detours are what make distant reference steps
    unattractive and the smallest-range candidate rule meaningful.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4, 0)))
    turns = np.zeros(num_steps)
    position = 3
    while position < num_steps - 1:
        turns[position] = rng.choice([-math.pi / 2.0, math.pi / 2.0])
        position += int(rng.integers(3, 6))
    step_length = float(rng.uniform(0.6, 0.8))
    heading = float(rng.uniform(0.0, 2.0 * math.pi))
    start = rng.uniform(-3.0, 3.0, size=2)
    probe = ScenarioConfig(
        aps=(ApDescriptor(1, (0.0, 0.0)),),
        biases=(0.0,),
        step_length=step_length,
        heading=heading,
        start=start,
        turns=turns,
        seed=seed,
    )
    path = generate_truth(probe).positions
    near, far = ap_clearance
    low = path.min(axis=0) - far - 2.0
    high = path.max(axis=0) + far + 2.0
    direction = np.array([math.cos(heading), math.sin(heading)])
    normal = np.array([-direction[1], direction[0]])
    positions: list[np.ndarray] = []
    while len(positions) < num_aps:
        candidate = rng.uniform(low, high)
        clearance = float(np.min(np.linalg.norm(path - candidate, axis=1)))
        if clearance < near or clearance > far:
            continue
        offset = candidate - start
        bearing = math.atan2(offset @ normal, offset @ direction) % (math.pi / 2.0)
        if min(bearing, math.pi / 2.0 - bearing) < 0.02:
            continue
        positions.append(candidate)
    biases = tuple(float(b) for b in rng.uniform(bias_low, bias_high, size=num_aps))
    return ScenarioConfig(
        aps=tuple(ApDescriptor(i + 1, p) for i, p in enumerate(positions)),
        biases=biases,
        step_length=step_length,
        heading=heading,
        start=start,
        turns=turns,
        range_noise_sigma=range_noise_sigma,
        heading_noise_sigma=heading_noise_sigma,
        outlier_fraction=outlier_fraction,
        outlier_low=outlier_low,
        outlier_high=outlier_high,
        seed=seed,
    )
