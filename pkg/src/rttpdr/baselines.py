"""Per-step multilateration benchmarks.

Two reference algorithms bracket the value of the pipeline's stages:

    - raw multilateration positions each step from uncompensated ranges;
    - bias-compensated multilateration first runs the per-AP joint
      bias/step-length estimation, subtracts each AP's estimated bias, and
      then multilaterates per step, i.e. everything except trajectory
      alignment.

Both use reference-anchor linear least squares: pick the AP with the
smallest range (the one most likely dominated by true distance), subtract
its circle equation from every other AP's, and solve the resulting linear
system for the position. Steps observed by fewer than three APs, or only
by collinear ones, are reported unresolved.
"""

from __future__ import annotations

import numpy as np

from .ensemble import EnsembleConfig, run_reference_pairs
from .geometry import accumulate_directions
from .types import (
    InfeasibleError,
    MobilityClass,
    TrajectoryEstimate,
    classify_mobility,
    cumulative_headings,
    rtt_matrix,
    rtt_to_range,
)

MIN_APS_PER_STEP = 3
_RANK_RATIO = 1e-9


def multilaterate(ap_positions, ranges) -> np.ndarray | None:
    """Reference-anchor least-squares position from one step's ranges.

    Returns None when fewer than three anchors are usable or the anchor
    geometry is degenerate (collinear anchors give a rank-deficient system).
    """
    positions = np.asarray(ap_positions, dtype=float)
    rho = np.asarray(ranges, dtype=float)
    usable = np.isfinite(rho)
    if int(usable.sum()) < MIN_APS_PER_STEP:
        return None
    positions = positions[usable]
    rho = rho[usable]
    ref = int(np.argmin(rho))
    others = np.arange(rho.size) != ref
    x_ref = positions[ref]
    x_m = positions[others]
    matrix = 2.0 * (x_ref - x_m)
    rhs = (
        rho[others] ** 2
        - rho[ref] ** 2
        - np.sum(x_m**2, axis=1)
        + x_ref @ x_ref
    )
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv[0] <= 0 or sv[-1] <= _RANK_RATIO * sv[0]:
        return None
    solution, *_ = np.linalg.lstsq(matrix, rhs, rcond=None)
    return solution


def _multilaterate_all(ap_positions, range_rows) -> TrajectoryEstimate:
    points = np.full((range_rows.shape[0], 2), np.nan)
    unresolved = []
    for i in range(range_rows.shape[0]):
        position = multilaterate(ap_positions, range_rows[i])
        if position is None:
            unresolved.append(i + 1)
        else:
            points[i] = position
    used = frozenset(range(1, ap_positions.shape[0] + 1))
    return TrajectoryEstimate(
        positions=points,
        heading=None,
        contributing_aps=used,
        unresolved_steps=tuple(unresolved),
    )


def run_baseline_raw(aps, measurements) -> TrajectoryEstimate:
    """Per-step multilateration on raw, uncompensated ranges."""
    ranges = rtt_to_range(rtt_matrix(measurements))
    positions = np.stack([ap.position for ap in aps])
    estimate = _multilaterate_all(positions, ranges)
    ids = frozenset(ap.ap_id for ap in aps)
    return TrajectoryEstimate(
        positions=estimate.positions,
        heading=None,
        contributing_aps=ids,
        unresolved_steps=estimate.unresolved_steps,
    )


def run_baseline_no_ta(
    aps,
    measurements,
    config: EnsembleConfig | None = None,
    estimates=None,
    angle_tolerance: float = 1e-6,
) -> TrajectoryEstimate:
    """Bias-compensated per-step multilateration (no trajectory alignment).

    ``estimates`` can carry ranging estimates already computed by the full
    pipeline to avoid re-running the ensemble; otherwise they are estimated
    here. Only APs with feasible estimates participate.
    """
    config = config or EnsembleConfig()
    ranges = rtt_to_range(rtt_matrix(measurements))
    steps = [m.step for m in measurements]
    if estimates is None:
        headings = cumulative_headings(steps)
        mobility = classify_mobility(headings, angle_tolerance)
        accumulators = accumulate_directions(headings)
        estimates = {}
        for column, ap in enumerate(aps):
            try:
                estimates[ap.ap_id] = run_reference_pairs(
                    ap.ap_id, ranges[:, column], accumulators, mobility, config
                ).estimate
            except InfeasibleError:
                continue

    usable_columns = []
    usable_positions = []
    compensated = []
    for column, ap in enumerate(aps):
        estimate = estimates.get(ap.ap_id)
        if estimate is None or not estimate.feasible:
            continue
        usable_columns.append(column)
        usable_positions.append(ap.position)
        compensated.append(ranges[:, column] - estimate.bias)
    if len(usable_columns) < MIN_APS_PER_STEP:
        raise InfeasibleError(
            "no-feasible-aps",
            f"bias-compensated multilateration needs {MIN_APS_PER_STEP} feasible APs, "
            f"have {len(usable_columns)}",
        )
    matrix = np.stack(compensated, axis=1)
    estimate = _multilaterate_all(np.stack(usable_positions), matrix)
    ids = frozenset(aps[c].ap_id for c in usable_columns)
    return TrajectoryEstimate(
        positions=estimate.positions,
        heading=None,
        contributing_aps=ids,
        unresolved_steps=estimate.unresolved_steps,
    )
