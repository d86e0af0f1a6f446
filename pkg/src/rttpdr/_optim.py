"""Internal 1D minimizer for the bearing/heading refinement steps.

The refined costs are piecewise-smooth with V-shaped (absolute-value-like)
minima and occasional +inf plateaus from feasibility masks, so
model-based steps (parabolic or two-line fits) are unreliable. Both uses
expose cheap vectorized evaluation, which makes iterative re-gridding the
simplest dependable scheme: sample the bracket uniformly, keep the best
sample's immediate neighbors as the new bracket, repeat. Each round
shrinks the bracket by (points - 1) / 2, so a handful of rounds reaches
any practical tolerance, and no smoothness assumption is ever needed.
"""

from __future__ import annotations

import numpy as np


def zoom_minimize(
    batch_fun,
    lo: float,
    hi: float,
    tol: float,
    points: int = 17,
    max_rounds: int = 60,
) -> tuple[float, float]:
    """Minimize over [lo, hi] down to bracket width ``tol``.

    ``batch_fun`` maps an array of positions to an array of costs (+inf
    allowed). Returns the best evaluated (position, cost); ties go to the
    smaller position. Deterministic.
    """
    if hi <= lo:
        raise ValueError("empty interval")
    if points < 5:
        raise ValueError("need at least 5 points per round")
    best_x = None
    best_f = np.inf
    for _ in range(max_rounds):
        xs = np.linspace(lo, hi, points)
        fs = np.asarray(batch_fun(xs), dtype=float)
        i = int(np.argmin(fs))
        if fs[i] < best_f or (fs[i] == best_f and (best_x is None or xs[i] < best_x)):
            best_x, best_f = float(xs[i]), float(fs[i])
        lo = float(xs[max(i - 1, 0)])
        hi = float(xs[min(i + 1, points - 1)])
        if hi - lo <= tol:
            break
    return best_x, best_f
