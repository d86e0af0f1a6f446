"""Reference-step selection and the per-AP median ensemble.

A single reference-step pair already determines (d, b), but any noise in
the two reference ranges propagates into every equation. Estimating over
all pairs drawn from a candidate pool and taking medians makes the result
robust: corrupting fewer than half of the pairs cannot move a median past
the neighboring clean order statistics.

Candidates are the steps with the smallest measured ranges: the closer the
user was to the AP, the more the range is dominated by true distance
rather than detour bias, so those steps give the cleanest subtractions.
The pool size defaults to a quarter of the usable steps, which field
studies found near-optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import DirectionAccumulators
from .ranging_arbitrary import (
    GammaScan,
    GammaSearchConfig,
    InfeasibleError,
    MIN_STEPS_ARBITRARY,
    _PairBatch,
    initial_positions_batch,
    search_gamma_batch,
)
from .ranging_linear import (
    MIN_STEPS_LINEAR,
    ReferenceStepPair,
    build_step_bias_system,
    recover_along_track,
    recover_cross_track,
    solve_step_bias_system,
)
from .types import (
    MobilityClass,
    RangingEstimate,
    RankDeficientError,
    TooFewStepsError,
    UnderdeterminedSystemError,
)


def median(values) -> float:
    """Order-statistic median; an even count averages the two central values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("median of an empty collection")
    return float(np.median(arr))


def select_candidates(ranges, count: int) -> tuple[int, ...]:
    """1-based indices of the ``count`` smallest valid ranges.

    Ties are broken toward the smaller step index; the result is sorted by
    range (then index), so pairs enumerate deterministically.
    """
    r = np.asarray(ranges, dtype=float)
    valid = np.flatnonzero(np.isfinite(r)) + 1
    if count < 2 or count > valid.size:
        raise ValueError(
            f"candidate count must be between 2 and {valid.size}, got {count}"
        )
    order = sorted(valid, key=lambda n: (r[n - 1], n))
    return tuple(int(n) for n in order[:count])


def default_candidate_count(num_steps: int) -> int:
    """Quarter-of-N rule (half-up rounding), floored at 2."""
    if num_steps < 2:
        raise ValueError("need at least two steps")
    return max(2, int(math.floor(0.25 * num_steps + 0.5)))


@dataclass(frozen=True)
class EnsembleConfig:
    """Knobs for the per-AP ensemble: candidate pool size (None or 0 means
    the quarter-of-N default) and the bearing-search settings."""

    candidate_count: int | None = None
    gamma: GammaSearchConfig = field(default_factory=GammaSearchConfig)


@dataclass(frozen=True)
class PairOutcome:
    """One reference pair's solve: estimates or the reason it was dropped."""

    pair: ReferenceStepPair
    step_length: float
    bias: float
    feasible: bool
    gamma: float | None = None
    failure: str | None = None


@dataclass(frozen=True)
class EnsembleResult:
    ap_id: int
    candidates: tuple[int, ...]
    outcomes: tuple[PairOutcome, ...]
    estimate: RangingEstimate

    @property
    def feasible_outcomes(self) -> tuple[PairOutcome, ...]:
        return tuple(o for o in self.outcomes if o.feasible)


def _pair_outcomes_linear(ranges, pairs) -> list[PairOutcome]:
    outcomes = []
    for pair in pairs:
        try:
            solution = solve_step_bias_system(build_step_bias_system(ranges, pair))
        except RankDeficientError as err:
            outcomes.append(
                PairOutcome(pair, math.nan, math.nan, False, failure=err.condition)
            )
            continue
        if not solution.feasible:
            outcomes.append(
                PairOutcome(
                    pair, math.nan, solution.bias, False, failure="negative-squared-step"
                )
            )
            continue
        outcomes.append(
            PairOutcome(pair, solution.step_length, solution.bias, True)
        )
    return outcomes


def _pair_outcomes_arbitrary(ranges, accumulators, pairs, scan, config) -> list[PairOutcome]:
    results = search_gamma_batch(ranges, accumulators, pairs, config.gamma, scan=scan)
    outcomes = []
    for pair, result in zip(pairs, results):
        if isinstance(result, InfeasibleError):
            outcomes.append(
                PairOutcome(pair, math.nan, math.nan, False, failure=result.condition)
            )
        else:
            outcomes.append(
                PairOutcome(pair, result.step_length, result.bias, True, gamma=result.gamma)
            )
    return outcomes


def aggregate_step_bias(outcomes) -> tuple[float, float]:
    """Median (d*, b*) over the feasible pairs."""
    feasible = [o for o in outcomes if o.feasible]
    if not feasible:
        raise ValueError("no feasible pair outcomes to aggregate")
    return (
        median([o.step_length for o in feasible]),
        median([o.bias for o in feasible]),
    )


def _infeasible_estimate(ap_id: int, mobility: MobilityClass) -> RangingEstimate:
    return RangingEstimate(
        ap_id=ap_id,
        step_length=math.nan,
        bias=math.nan,
        z1=np.array([math.nan, math.nan]),
        linear_sign_ambiguous=mobility is MobilityClass.LINEAR,
        feasible=False,
    )


def run_reference_pairs(
    ap_id: int,
    ranges,
    accumulators: DirectionAccumulators,
    mobility: MobilityClass,
    config: EnsembleConfig | None = None,
) -> EnsembleResult:
    """Run the full per-AP ensemble and aggregate via medians.

    Stage 1 solves every candidate pair for (d, b) and takes medians over
    the feasible ones. Stage 2 re-derives the first position z1 per pair
    with the *aggregated* (d*, b*) substituted back into the pair's
    geometry, then takes component-wise medians. For straight walks the
    cross-track magnitudes are aggregated as magnitudes (mixing the two
    admissible signs before the median would cancel them spuriously) and
    the sign ambiguity flag is preserved for the alignment stage.
    """
    config = config or EnsembleConfig()
    r = np.asarray(ranges, dtype=float)
    valid = np.flatnonzero(np.isfinite(r)) + 1
    minimum = MIN_STEPS_LINEAR if mobility is MobilityClass.LINEAR else MIN_STEPS_ARBITRARY
    if valid.size < minimum:
        raise TooFewStepsError(required=minimum, available=int(valid.size), ap_id=ap_id)

    count = config.candidate_count or default_candidate_count(int(valid.size))
    count = max(2, min(count, int(valid.size)))
    candidates = select_candidates(r, count)
    pairs = [ReferenceStepPair(a1, a2) for a1, a2 in combinations(candidates, 2)]

    if mobility is MobilityClass.LINEAR:
        outcomes = _pair_outcomes_linear(r, pairs)
        scan = None
    else:
        scan = GammaScan(r, accumulators, candidates, config.gamma.grid())
        outcomes = _pair_outcomes_arbitrary(r, accumulators, pairs, scan, config)

    feasible_pairs = [o for o in outcomes if o.feasible]
    if not feasible_pairs:
        return EnsembleResult(
            ap_id, candidates, tuple(outcomes), _infeasible_estimate(ap_id, mobility)
        )

    step_length, bias = aggregate_step_bias(outcomes)
    if step_length <= 0:
        return EnsembleResult(
            ap_id, candidates, tuple(outcomes), _infeasible_estimate(ap_id, mobility)
        )

    if mobility is MobilityClass.LINEAR:
        along, cross = [], []
        for outcome in feasible_pairs:
            q1 = recover_along_track(step_length, bias, r, outcome.pair)
            result = recover_cross_track(step_length, bias, q1, r)
            if not result.feasible:
                continue
            along.append(q1)
            cross.append(result.magnitude)
        if not along:
            return EnsembleResult(
                ap_id, candidates, tuple(outcomes), _infeasible_estimate(ap_id, mobility)
            )
        z1 = np.array([median(along), median(cross)])
        sign_ambiguous = True
    else:
        batch = _PairBatch(scan, [o.pair for o in feasible_pairs], 0.0, 1.0)
        stacked = initial_positions_batch(scan, batch, step_length, bias)
        stacked = stacked[np.all(np.isfinite(stacked), axis=1)]
        if stacked.shape[0] == 0:
            return EnsembleResult(
                ap_id, candidates, tuple(outcomes), _infeasible_estimate(ap_id, mobility)
            )
        z1 = np.array([median(stacked[:, 0]), median(stacked[:, 1])])
        sign_ambiguous = False

    feasible = (
        step_length > 0
        and bias < float(np.min(r[valid - 1]))
        and bool(np.all(np.isfinite(z1)))
    )
    estimate = RangingEstimate(
        ap_id=ap_id,
        step_length=step_length,
        bias=bias,
        z1=z1,
        linear_sign_ambiguous=sign_ambiguous,
        feasible=feasible,
    )
    return EnsembleResult(ap_id, candidates, tuple(outcomes), estimate)


def estimate_ap(
    ap_id: int,
    ranges,
    accumulators: DirectionAccumulators,
    mobility: MobilityClass,
    config: EnsembleConfig | None = None,
) -> RangingEstimate:
    """Per-AP joint estimate of (step length, bias, first position)."""
    return run_reference_pairs(ap_id, ranges, accumulators, mobility, config).estimate
