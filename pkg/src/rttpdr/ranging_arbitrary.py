"""Joint RTT-bias and step-length estimation for walks with turns.

Writing the unknown first position in polar form, z1 = R*[cos(g), sin(g)],
turns the per-step range constraint into

    R^2 + 2*d*R*F_n(g) + d^2*(c_n^2 + s_n^2) = (r_n - b)^2

where F_n(g) = c_n*cos(g) + s_n*sin(g) is the walked displacement up to
step n projected onto the bearing g (in units of the step length). Pairing
each step against two reference steps a1, a2 cancels first R^2 and then,
by cross-multiplying with the projection differences

    f_{n,a}(g) = F_n(g) - F_a(g),

the remaining R term, leaving a system that is linear in [d^2, b] once g is
fixed. The true bearing is found by a 1D search over [0, pi) that scores
each candidate g by two errors: the least-squares residual of the linear
system itself, and the spread of the per-equation implied radii R (all of
which must agree at the true bearing). Solutions at g and g + pi are
algebraically identical, which is why half a period suffices.

Five valid steps are the minimum: the stacked system has N - 2 rows and
must stay overdetermined enough to pin the extra latent bearing. At the
special bearings where f_{a1,a2}(g) = 0 every row becomes proportional to
the same vector, the system drops to rank 1, and the search must skip the
cell (:class:`UnderdeterminedSystemError`).

Once (d, b) are fixed, the first position z1 itself satisfies, for every
step/reference combination, the linear relation

    (c_n - c_a)*q1 + (s_n - s_a)*u1 = g_{n,a}

solved in one least-squares pass. Unlike the straight-line case there is no
mirror ambiguity: turning breaks the symmetry as long as at least one
heading leaves the initial line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._optim import zoom_minimize
from .geometry import DirectionAccumulators
from .ranging_linear import ReferenceStepPair
from .types import (
    InfeasibleError,
    RankDeficientError,
    TooFewStepsError,
    UnderdeterminedSystemError,
)

MIN_STEPS_ARBITRARY = 5

#: Singular-value ratio below which a stacked system counts as rank 1.
RANK_RATIO = 1e-9

#: Implied-radius terms with |f_{n,a}| below this are skipped instead of
#: letting a benign near-zero denominator dominate the spread.
PROJECTION_EPS = 1e-9

#: Minimum sigma2/sigma1 a cell needs before its system residual may seed
#: the secondary candidate bearing; below this the residual dips toward
#: zero merely because the system approaches rank 1.
E1_CANDIDATE_CONDITION_FLOOR = 1e-3


@dataclass(frozen=True)
class GammaSearchConfig:
    """Bearing-search settings: grid size over [0, pi), error weights, and
    the local refinement tolerance (None disables refinement)."""

    grid_size: int = 2048
    w1: float = 0.0
    w2: float = 1.0
    refine_tol: float | None = 1e-10

    def __post_init__(self):
        if self.grid_size < 4:
            raise ValueError("grid_size must be at least 4")
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if self.refine_tol is not None and self.refine_tol <= 0:
            raise ValueError("refine_tol must be positive or None")

    @property
    def resolution(self) -> float:
        """Grid spacing in radians."""
        return math.pi / self.grid_size

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, math.pi, self.grid_size, endpoint=False)


@dataclass(frozen=True)
class GammaSystem:
    """Stacked linear system in [d^2, b] at one candidate bearing."""

    matrix: np.ndarray  # (rows, 2) columns [alpha_n, beta_n]
    rhs: np.ndarray  # zeta_n
    row_steps: tuple[int, ...]
    gamma: float


@dataclass(frozen=True)
class GammaSolution:
    squared_step_length: float
    bias: float
    residual: float
    feasible: bool

    @property
    def step_length(self) -> float:
        if not self.feasible:
            return math.nan
        return math.sqrt(self.squared_step_length)


@dataclass(frozen=True)
class GammaSearchResult:
    pair: ReferenceStepPair
    gamma: float
    step_length: float
    bias: float
    residual: float  # system residual at the chosen bearing
    spread: float  # implied-radius standard deviation at the chosen bearing
    cost: float


def _valid_indices(ranges: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.isfinite(ranges)) + 1


def direction_projection(
    accumulators: DirectionAccumulators, n: int, a: int, gamma: float
) -> float:
    """f_{n,a}(gamma): net displacement between steps a and n projected onto
    the bearing gamma, in step-length units."""
    c, s = accumulators.cos_sums, accumulators.sin_sums
    dc = c[n - 1] - c[a - 1]
    ds = s[n - 1] - s[a - 1]
    return float(dc * math.cos(gamma) + ds * math.sin(gamma))


def build_gamma_system(
    ranges, accumulators: DirectionAccumulators, pair: ReferenceStepPair, gamma: float
) -> GammaSystem:
    """Assemble the [d^2, b] system for one candidate bearing."""
    r = np.asarray(ranges, dtype=float)
    valid = _valid_indices(r)
    if valid.size < MIN_STEPS_ARBITRARY:
        raise TooFewStepsError(required=MIN_STEPS_ARBITRARY, available=int(valid.size))
    a1, a2 = pair.as_tuple()
    for a in (a1, a2):
        if a > r.size or not np.isfinite(r[a - 1]):
            raise ValueError(f"reference step {a} has no valid range")

    rows = valid[(valid != a1) & (valid != a2)]
    idx = rows - 1
    c, s = accumulators.cos_sums, accumulators.sin_sums
    sq = accumulators.squared_norms
    cg, sg = math.cos(gamma), math.sin(gamma)

    def against(a: int):
        ai = a - 1
        f = (c[idx] - c[ai]) * cg + (s[idx] - s[ai]) * sg
        eta = sq[idx] - sq[ai]
        dr = r[idx] - r[ai]
        dq = r[idx] ** 2 - r[ai] ** 2
        return f, eta, dr, dq

    f1, eta1, dr1, dq1 = against(a1)
    f2, eta2, dr2, dq2 = against(a2)
    alpha = f2 * eta1 - f1 * eta2
    beta = 2.0 * (f2 * dr1 - f1 * dr2)
    zeta = f2 * dq1 - f1 * dq2
    return GammaSystem(
        matrix=np.stack([alpha, beta], axis=1),
        rhs=zeta,
        row_steps=tuple(int(n) for n in rows),
        gamma=float(gamma),
    )


def solve_gamma_system(system: GammaSystem) -> GammaSolution:
    """Least-squares solve for [d^2, b]; raises UnderdeterminedSystemError
    when the matrix is numerically rank 1 (the f_{a1,a2} = 0 bearings)."""
    a = system.matrix
    u, sv, vt = np.linalg.svd(a, full_matrices=False)
    if sv[0] <= 0 or sv[1] <= RANK_RATIO * sv[0]:
        raise UnderdeterminedSystemError(
            f"system is rank deficient at bearing {system.gamma:.6f}"
        )
    x = vt.T @ ((u.T @ system.rhs) / sv)
    squared_step, bias = float(x[0]), float(x[1])
    residual = float(np.linalg.norm(a @ x - system.rhs))
    return GammaSolution(
        squared_step_length=squared_step,
        bias=bias,
        residual=residual,
        feasible=squared_step > 0.0,
    )


def radius_consistency_cost(
    ranges,
    accumulators: DirectionAccumulators,
    pair: ReferenceStepPair,
    gamma: float,
    step_length: float,
    bias: float,
) -> float:
    """Spread (population std) of the implied initial radii R.

    Every step/reference combination yields its own estimate of R when
    (d, b) are plugged back in; at the true bearing they all coincide.
    Terms whose projection difference is numerically zero are skipped;
    with fewer than two usable terms the cost is +inf.
    """
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    r = np.asarray(ranges, dtype=float)
    valid = _valid_indices(r)
    c, s = accumulators.cos_sums, accumulators.sin_sums
    sq = accumulators.squared_norms
    cg, sg = math.cos(gamma), math.sin(gamma)
    entries = []
    for a in pair.as_tuple():
        ai = a - 1
        others = valid[valid != a]
        idx = others - 1
        f = (c[idx] - c[ai]) * cg + (s[idx] - s[ai]) * sg
        keep = np.abs(f) >= PROJECTION_EPS
        if not np.any(keep):
            continue
        idx = idx[keep]
        f = f[keep]
        numerator = (
            r[idx] ** 2
            - r[ai] ** 2
            - 2.0 * (r[idx] - r[ai]) * bias
            - (sq[idx] - sq[ai]) * step_length**2
        )
        entries.append(numerator / (2.0 * f * step_length))
    if not entries:
        return math.inf
    values = np.concatenate(entries)
    if values.size < 2:
        return math.inf
    return float(np.std(values))


class GammaScan:
    """Vectorized bearing-grid evaluation shared across reference pairs.

    Precomputes, per candidate reference step and grid bearing, the masked
    reciprocal-projection sums that the implied-radius spread needs, so each
    pair costs O(grid) instead of O(grid * steps). The spread uses a
    one-pass moment form, which is good enough to rank grid cells; the
    refinement stage re-evaluates candidates through the exact scalar path.
    """

    def __init__(self, ranges, accumulators, candidates, gammas):
        r_full = np.asarray(ranges, dtype=float)
        valid = _valid_indices(r_full)
        if valid.size < MIN_STEPS_ARBITRARY:
            raise TooFewStepsError(required=MIN_STEPS_ARBITRARY, available=int(valid.size))
        self.gammas = np.asarray(gammas, dtype=float)
        self.candidates = tuple(int(a) for a in candidates)
        candidate_set = set(self.candidates)
        if not candidate_set.issubset(set(int(v) for v in valid)):
            raise ValueError("candidates must be steps with valid ranges")

        idx = valid - 1
        self._r = r_full[idx]
        self._c = np.asarray(accumulators.cos_sums, dtype=float)[idx]
        self._s = np.asarray(accumulators.sin_sums, dtype=float)[idx]
        self._sq = self._c**2 + self._s**2
        self.min_range = float(np.min(self._r))
        self._pos = {int(step): j for j, step in enumerate(valid)}

        cos_g = np.cos(self.gammas)
        sin_g = np.sin(self.gammas)
        self._cos2 = cos_g * cos_g
        self._cossin = cos_g * sin_g
        self._sin2 = sin_g * sin_g

        cand_idx = np.array([self._pos[a] for a in self.candidates])
        # per-candidate row constants, shape (A, Nv)
        self._dc = self._c[None, :] - self._c[cand_idx, None]
        self._ds = self._s[None, :] - self._s[cand_idx, None]
        self._eta = self._sq[None, :] - self._sq[cand_idx, None]
        self._dr = self._r[None, :] - self._r[cand_idx, None]
        self._dq = self._r[None, :] ** 2 - self._r[cand_idx, None] ** 2

        # masked reciprocal-projection moments; one BLAS pass for the
        # projections, batched matmuls for the reductions
        a_count = len(self.candidates)
        nv = self._r.size
        g_count = self.gammas.size
        coef = np.stack([self._dc.ravel(), self._ds.ravel()], axis=1)  # (A*Nv, 2)
        f = (coef @ np.stack([cos_g, sin_g])).reshape(a_count, nv, g_count)
        mask = np.abs(f) >= PROJECTION_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(mask, 1.0 / f, 0.0)
        del f
        self._count = mask.sum(axis=1).astype(float)  # (A, G)
        del mask
        first = np.matmul(np.stack([self._dq, self._dr, self._eta], axis=1), w)
        self._S0, self._S1, self._S2 = first[:, 0], first[:, 1], first[:, 2]
        w *= w
        second = np.matmul(
            np.stack(
                [
                    self._dq * self._dq,
                    self._dq * self._dr,
                    self._dq * self._eta,
                    self._dr * self._dr,
                    self._dr * self._eta,
                    self._eta * self._eta,
                ],
                axis=1,
            ),
            w,
        )
        del w
        (
            self._Q00,
            self._Q01,
            self._Q02,
            self._Q11,
            self._Q12,
            self._Q22,
        ) = (second[:, k] for k in range(6))

    def _candidate_row(self, step: int) -> int:
        try:
            return self.candidates.index(step)
        except ValueError:
            raise ValueError(f"step {step} is not in the candidate set") from None

    def scan_pair(self, pair: ReferenceStepPair) -> "PairScan":
        """Evaluate the pair's system on the whole bearing grid."""
        i1 = self._candidate_row(pair.a1)
        i2 = self._candidate_row(pair.a2)
        dc1, ds1, eta1, dr1, dq1 = (
            arr[i1] for arr in (self._dc, self._ds, self._eta, self._dr, self._dq)
        )
        dc2, ds2, eta2, dr2, dq2 = (
            arr[i2] for arr in (self._dc, self._ds, self._eta, self._dr, self._dq)
        )
        # alpha/beta/zeta are linear in (cos g, sin g); rows at the reference
        # steps vanish identically, so no explicit row exclusion is needed
        # for the Gram sums below.
        ca = dc2 * eta1 - dc1 * eta2
        sa = ds2 * eta1 - ds1 * eta2
        cb = 2.0 * (dc2 * dr1 - dc1 * dr2)
        sb = 2.0 * (ds2 * dr1 - ds1 * dr2)
        cz = dc2 * dq1 - dc1 * dq2
        sz = ds2 * dq1 - ds1 * dq2

        def quad(u_c, u_s, v_c, v_s):
            return (
                float(u_c @ v_c) * self._cos2
                + float(u_c @ v_s + u_s @ v_c) * self._cossin
                + float(u_s @ v_s) * self._sin2
            )

        g11 = quad(ca, sa, ca, sa)
        g12 = quad(ca, sa, cb, sb)
        g22 = quad(cb, sb, cb, sb)
        h1 = quad(ca, sa, cz, sz)
        h2 = quad(cb, sb, cz, sz)
        zz = quad(cz, sz, cz, sz)

        det = g11 * g22 - g12 * g12
        trace = g11 + g22
        underdetermined = det <= (RANK_RATIO**2) * trace * trace
        safe_det = np.where(underdetermined, 1.0, det)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = (g22 * h1 - g12 * h2) / safe_det
            bias = (g11 * h2 - g12 * h1) / safe_det
        e1_sq = zz - 2.0 * (d2 * h1 + bias * h2) + (
            d2 * d2 * g11 + 2.0 * d2 * bias * g12 + bias * bias * g22
        )
        e1 = np.sqrt(np.clip(e1_sq, 0.0, None))

        feasible = (~underdetermined) & (d2 > 0.0) & (bias < self.min_range)
        with np.errstate(invalid="ignore"):
            step = np.where(feasible, np.sqrt(np.where(d2 > 0, d2, 1.0)), np.nan)

        count = self._count[i1] + self._count[i2]
        s0 = self._S0[i1] + self._S0[i2]
        s1 = self._S1[i1] + self._S1[i2]
        s2 = self._S2[i1] + self._S2[i2]
        q00 = self._Q00[i1] + self._Q00[i2]
        q01 = self._Q01[i1] + self._Q01[i2]
        q02 = self._Q02[i1] + self._Q02[i2]
        q11 = self._Q11[i1] + self._Q11[i2]
        q12 = self._Q12[i1] + self._Q12[i2]
        q22 = self._Q22[i1] + self._Q22[i2]
        with np.errstate(divide="ignore", invalid="ignore"):
            sum_r = (s0 - 2.0 * bias * s1 - d2 * s2) / (2.0 * step)
            sum_r2 = (
                q00
                + 4.0 * bias * bias * q11
                + d2 * d2 * q22
                - 4.0 * bias * q01
                - 2.0 * d2 * q02
                + 4.0 * bias * d2 * q12
            ) / (4.0 * d2)
            mean_r = sum_r / count
            variance = sum_r2 / count - mean_r * mean_r
        e2 = np.sqrt(np.clip(variance, 0.0, None))
        e2 = np.where(feasible & (count >= 2), e2, np.inf)
        return PairScan(
            gammas=self.gammas,
            squared_step=d2,
            bias=bias,
            step_length=step,
            residual=e1,
            spread=e2,
            feasible=feasible,
            underdetermined=underdetermined,
        )


@dataclass(frozen=True)
class PairScan:
    """Per-grid-cell quantities for one reference pair."""

    gammas: np.ndarray
    squared_step: np.ndarray
    bias: np.ndarray
    step_length: np.ndarray
    residual: np.ndarray
    spread: np.ndarray
    feasible: np.ndarray
    underdetermined: np.ndarray

    def cost(self, w1: float, w2: float) -> np.ndarray:
        values = np.where(self.feasible, w1 * self.residual + w2 * self.spread, np.inf)
        return np.where(np.isnan(values), np.inf, values)


class _PairBatch:
    """Exact vectorized bearing evaluation for a batch of reference pairs.

    Mirrors the public build/solve/spread path (including the two-pass
    standard deviation, which the grid scan's one-pass moments cannot match
    at noise-free precision). The stacked system reduces per pair to 18
    Gram coefficients because every row is linear in (cos g, sin g); only
    the implied-radius entries need per-evaluation vector work. Rows where
    a pair references itself carry an identically zero projection and are
    dropped by the same mask that skips near-zero denominators.
    """

    def __init__(self, scan: "GammaScan", pairs, w1: float, w2: float):
        idx1 = np.array([scan._candidate_row(p.a1) for p in pairs])
        idx2 = np.array([scan._candidate_row(p.a2) for p in pairs])
        dc1, ds1 = scan._dc[idx1], scan._ds[idx1]
        dc2, ds2 = scan._dc[idx2], scan._ds[idx2]
        eta1, dr1, dq1 = scan._eta[idx1], scan._dr[idx1], scan._dq[idx1]
        eta2, dr2, dq2 = scan._eta[idx2], scan._dr[idx2], scan._dq[idx2]
        ca = dc2 * eta1 - dc1 * eta2
        sa = ds2 * eta1 - ds1 * eta2
        cb = 2.0 * (dc2 * dr1 - dc1 * dr2)
        sb = 2.0 * (ds2 * dr1 - ds1 * dr2)
        cz = dc2 * dq1 - dc1 * dq2
        sz = ds2 * dq1 - ds1 * dq2

        def gram(u_c, u_s, v_c, v_s):
            return np.stack(
                [
                    np.einsum("ln,ln->l", u_c, v_c),
                    np.einsum("ln,ln->l", u_c, v_s) + np.einsum("ln,ln->l", u_s, v_c),
                    np.einsum("ln,ln->l", u_s, v_s),
                ],
                axis=1,
            )

        # (L, 6, 3): quadratic-form coefficients of G11, G12, G22, h1, h2, zz
        self.gram = np.stack(
            [
                gram(ca, sa, ca, sa),
                gram(ca, sa, cb, sb),
                gram(cb, sb, cb, sb),
                gram(ca, sa, cz, sz),
                gram(cb, sb, cz, sz),
                gram(cz, sz, cz, sz),
            ],
            axis=1,
        )
        self.index1 = idx1
        self.index2 = idx2
        self._fc = np.concatenate([dc1, dc2], axis=1)  # (L, 2*Nv)
        self._fs = np.concatenate([ds1, ds2], axis=1)
        self._eta = np.concatenate([eta1, eta2], axis=1)
        self._dr = np.concatenate([dr1, dr2], axis=1)
        self._dq = np.concatenate([dq1, dq2], axis=1)
        self._min_range = scan.min_range
        self._w1, self._w2 = w1, w2

    def _system_at(self, gram, basis, with_residual=True):
        """Solve the per-cell 2x2 systems given quadratic-form bases.

        Returns (d2, bias, residual|None, solvable, conditioning) where
        ``conditioning`` ~ (sigma2/sigma1)^2 of the stacked matrix.
        """
        vals = gram @ basis  # (L, 6, K)
        g11, g12, g22, h1, h2, zz = (vals[:, k] for k in range(6))
        det = g11 * g22 - g12 * g12
        trace = g11 + g22
        with np.errstate(divide="ignore", invalid="ignore"):
            conditioning = np.where(trace > 0.0, det / (trace * trace), 0.0)
        solvable = conditioning > RANK_RATIO**2
        safe = np.where(solvable, det, 1.0)
        d2 = (g22 * h1 - g12 * h2) / safe
        bias = (g11 * h2 - g12 * h1) / safe
        if not with_residual:
            return d2, bias, None, solvable, conditioning
        residual_sq = (
            zz
            - 2.0 * (d2 * h1 + bias * h2)
            + d2 * d2 * g11
            + 2.0 * d2 * bias * g12
            + bias * bias * g22
        )
        residual = np.sqrt(np.clip(residual_sq, 0.0, None))
        return d2, bias, residual, solvable, conditioning

    def evaluate(
        self,
        gammas: np.ndarray,
        rows: np.ndarray | None = None,
        full: bool = True,
        weights: tuple[float, float] | None = None,
        condition_floor: float | None = None,
    ):
        """Exact costs for per-pair bearing matrices.

        ``gammas`` has shape (len(rows), K); returns (cost, d2, bias,
        residual, spread) arrays of the same shape. ``weights`` overrides
        the configured (w1, w2); ``condition_floor`` additionally rejects
        cells whose system conditioning sigma2/sigma1 falls below it (used
        by the residual-guided candidate search to stay away from the
        rank-collapse bearings, where the residual dips spuriously). With
        ``full=False`` the terms the weights zero out are skipped.
        """
        w1, w2 = weights if weights is not None else (self._w1, self._w2)
        take = slice(None) if rows is None else rows
        cg = np.cos(gammas)
        sg = np.sin(gammas)
        basis = np.stack([cg * cg, cg * sg, sg * sg], axis=1)  # (L, 3, K)
        with_residual = full or w1 != 0.0
        d2, bias, residual, solvable, conditioning = self._system_at(
            self.gram[take], basis, with_residual=with_residual
        )
        feasible = solvable & (d2 > 0.0) & (bias < self._min_range)
        if condition_floor is not None:
            feasible &= conditioning > condition_floor**2
        step = np.sqrt(np.where(d2 > 0.0, d2, 1.0))

        if full or w2 != 0.0:
            f = (
                self._fc[take][:, :, None] * cg[:, None, :]
                + self._fs[take][:, :, None] * sg[:, None, :]
            )
            numerator = (
                self._dq[take][:, :, None]
                - self._dr[take][:, :, None] * (2.0 * bias)[:, None, :]
                - self._eta[take][:, :, None] * d2[:, None, :]
            )
            keep = np.abs(f) >= PROJECTION_EPS
            with np.errstate(divide="ignore", invalid="ignore"):
                entries = np.where(keep, numerator / ((2.0 * step)[:, None, :] * f), 0.0)
            count = keep.sum(axis=1)
            usable = count >= 2
            safe_count = np.where(usable, count, 1)
            mean = entries.sum(axis=1) / safe_count
            centered = np.where(keep, entries - mean[:, None, :], 0.0)
            spread = np.sqrt(np.sum(centered * centered, axis=1) / safe_count)
        else:
            spread = np.zeros_like(d2)
            usable = np.ones(d2.shape, dtype=bool)
        if residual is None:
            residual = np.zeros_like(spread)
        with np.errstate(invalid="ignore"):
            cost = np.where(feasible & usable, w1 * residual + w2 * spread, np.inf)
        return np.where(np.isnan(cost), np.inf, cost), d2, bias, residual, spread

    def grid_cost(self, scan: "GammaScan", chunk: int = 256, residual_candidates: bool = False):
        """One-pass costs on the scan's full bearing grid, (L, G).

        Uses the scan's precomputed moment tensors, so the spread here is
        the moment form: right for ranking grid cells, not for final
        values (the exact :meth:`evaluate` provides those). With
        ``residual_candidates`` a second (L, G) array is returned holding
        the system residual restricted to feasible, well-conditioned cells
        (inf elsewhere); its per-pair argmin seeds the residual-guided
        candidate bearing.
        """
        total = self.gram.shape[0]
        g_count = scan.gammas.size
        basis = np.stack([scan._cos2, scan._cossin, scan._sin2])  # (3, G)
        out = np.empty((total, g_count))
        res_out = np.empty((total, g_count)) if residual_candidates else None
        for lo in range(0, total, chunk):
            hi = min(lo + chunk, total)
            rows = slice(lo, hi)
            d2, bias, residual, solvable, conditioning = self._system_at(
                self.gram[rows],
                basis,
                with_residual=residual_candidates or self._w1 != 0.0,
            )
            feasible = solvable & (d2 > 0.0) & (bias < scan.min_range)
            step = np.sqrt(np.where(d2 > 0.0, d2, 1.0))
            i1 = self.index1[rows]
            i2 = self.index2[rows]
            count = scan._count[i1] + scan._count[i2]
            s0 = scan._S0[i1] + scan._S0[i2]
            s1 = scan._S1[i1] + scan._S1[i2]
            s2 = scan._S2[i1] + scan._S2[i2]
            q00 = scan._Q00[i1] + scan._Q00[i2]
            q01 = scan._Q01[i1] + scan._Q01[i2]
            q02 = scan._Q02[i1] + scan._Q02[i2]
            q11 = scan._Q11[i1] + scan._Q11[i2]
            q12 = scan._Q12[i1] + scan._Q12[i2]
            q22 = scan._Q22[i1] + scan._Q22[i2]
            with np.errstate(divide="ignore", invalid="ignore"):
                sum_r = (s0 - 2.0 * bias * s1 - d2 * s2) / (2.0 * step)
                sum_r2 = (
                    q00
                    + 4.0 * bias * bias * q11
                    + d2 * d2 * q22
                    - 4.0 * bias * q01
                    - 2.0 * d2 * q02
                    + 4.0 * bias * d2 * q12
                ) / (4.0 * d2)
                mean_r = sum_r / count
                variance = sum_r2 / count - mean_r * mean_r
            spread = np.sqrt(np.clip(variance, 0.0, None))
            if residual is None:
                cost = self._w2 * spread
            else:
                cost = self._w1 * residual + self._w2 * spread
            cost = np.where(feasible & (count >= 2), cost, np.inf)
            out[rows] = np.where(np.isnan(cost), np.inf, cost)
            if residual_candidates:
                guarded = feasible & (conditioning > E1_CANDIDATE_CONDITION_FLOOR**2)
                res_out[rows] = np.where(guarded, residual, np.inf)
        if residual_candidates:
            return out, res_out
        return out


def _fold_half_period(gamma):
    return np.mod(gamma, math.pi)


def _zoom_brackets(batch, rows, centers, spacing, tol, weights=None, condition_floor=None):
    """Vectorized zoom refinement of per-pair brackets; returns best bearings."""
    lo = centers - spacing
    hi = centers + spacing
    best_x = centers.copy()
    best_f = np.full(centers.shape, np.inf)
    active = rows.copy()
    offsets = np.linspace(0.0, 1.0, 17)
    positions = {int(r): i for i, r in enumerate(rows)}
    for _ in range(60):
        if active.size == 0:
            break
        slots = np.array([positions[int(r)] for r in active])
        xs = lo[slots, None] + (hi[slots] - lo[slots])[:, None] * offsets
        cost_k = batch.evaluate(
            _fold_half_period(xs),
            rows=active,
            full=False,
            weights=weights,
            condition_floor=condition_floor,
        )[0]
        arg = np.argmin(cost_k, axis=1)
        sel = np.arange(active.size)
        better = cost_k[sel, arg] < best_f[slots]
        best_f[slots[better]] = cost_k[sel, arg][better]
        best_x[slots[better]] = xs[sel, arg][better]
        lo[slots] = xs[sel, np.maximum(arg - 1, 0)]
        hi[slots] = xs[sel, np.minimum(arg + 1, len(offsets) - 1)]
        keep = (hi[slots] - lo[slots]) > tol
        active = active[keep]
    return best_x, best_f


def search_gamma_batch(
    ranges,
    accumulators: DirectionAccumulators,
    pairs,
    config: GammaSearchConfig | None = None,
    scan: GammaScan | None = None,
) -> list[GammaSearchResult | InfeasibleError]:
    """Bearing search for many reference pairs sharing one AP's data.

    Vectorized across pairs: one grid pass ranks every pair's cells and a
    joint zoom refinement polishes each pair's best bracket. Because the
    spread criterion can develop needle-thin minima next to bearings that
    zero many projection denominators, a second candidate is refined from
    the system-residual landscape (restricted to well-conditioned cells,
    where the residual cannot dip spuriously); the final bearing is
    whichever candidate scores best under the configured cost. Per pair
    the outcome is either a :class:`GammaSearchResult` or the
    :class:`InfeasibleError` describing why no bearing was usable
    (returned, not raised, so one bad pair cannot abort an ensemble).
    """
    config = config or GammaSearchConfig()
    pairs = list(pairs)
    if not pairs:
        return []
    if scan is None:
        candidates = sorted({p.a1 for p in pairs} | {p.a2 for p in pairs})
        scan = GammaScan(ranges, accumulators, candidates, config.grid())
    batch = _PairBatch(scan, pairs, config.w1, config.w2)
    grid = scan.gammas
    spacing = math.pi / grid.size
    total = len(pairs)

    grid_cost, residual_grid = batch.grid_cost(scan, residual_candidates=True)
    best_cells = np.argmin(grid_cost, axis=1)
    best_values = grid_cost[np.arange(total), best_cells]
    workable = np.isfinite(best_values)
    residual_cells = np.argmin(residual_grid, axis=1)
    residual_workable = np.isfinite(
        residual_grid[np.arange(total), residual_cells]
    )

    # runner-up cells by grid ranking, used when the exact path disagrees
    # with the one-pass ranking at the feasibility boundary
    extras = min(2, grid.size - 1)
    runner_cells = np.argpartition(grid_cost, extras, axis=1)[:, : extras + 1]
    runner_order = np.argsort(
        np.take_along_axis(grid_cost, runner_cells, axis=1), axis=1, kind="stable"
    )
    runner_cells = np.take_along_axis(runner_cells, runner_order, axis=1)

    columns = [grid[best_cells]] + [grid[runner_cells[:, k]] for k in range(1, extras + 1)]
    columns.append(grid[residual_cells])
    if config.refine_tol is not None:
        if np.any(workable):
            refined, _ = _zoom_brackets(
                batch,
                np.flatnonzero(workable),
                grid[best_cells].copy(),
                spacing,
                config.refine_tol,
            )
            columns.insert(0, _fold_half_period(refined))
        # refine the residual-guided candidate only where it points at a
        # genuinely different basin than the configured-cost argmin
        separate = residual_workable & (
            np.abs(residual_cells - best_cells) > 1
        )
        if np.any(separate):
            refined_res = grid[residual_cells].astype(float).copy()
            polished, _ = _zoom_brackets(
                batch,
                np.flatnonzero(separate),
                refined_res,
                spacing,
                config.refine_tol,
                weights=(1.0, 0.0),
                condition_floor=E1_CANDIDATE_CONDITION_FLOOR,
            )
            refined_res[separate] = polished[separate]
            columns.append(_fold_half_period(refined_res))

    candidate_matrix = np.stack(columns, axis=1)  # (L, C)
    final_cost, final_d2, final_bias, final_res, final_spread = batch.evaluate(
        _fold_half_period(candidate_matrix)
    )

    results: list[GammaSearchResult | InfeasibleError] = []
    for i, pair in enumerate(pairs):
        chosen = None
        if workable[i] or residual_workable[i]:
            finite = np.flatnonzero(np.isfinite(final_cost[i]))
            if finite.size:
                order = np.lexsort(
                    (candidate_matrix[i][finite], final_cost[i][finite])
                )
                chosen = int(finite[order[0]])
        if chosen is None:
            results.append(
                InfeasibleError(
                    "gamma-feasible-set-empty",
                    f"no feasible bearing for reference steps {pair.as_tuple()}",
                )
            )
            continue
        results.append(
            GammaSearchResult(
                pair=pair,
                gamma=float(_fold_half_period(candidate_matrix[i, chosen])),
                step_length=math.sqrt(final_d2[i, chosen]),
                bias=float(final_bias[i, chosen]),
                residual=float(final_res[i, chosen]),
                spread=float(final_spread[i, chosen]),
                cost=float(final_cost[i, chosen]),
            )
        )
    return results


def search_gamma(
    ranges,
    accumulators: DirectionAccumulators,
    pair: ReferenceStepPair,
    config: GammaSearchConfig | None = None,
    scan: GammaScan | None = None,
) -> GammaSearchResult:
    """Find the bearing minimizing the weighted error over [0, pi).

    A uniform grid pass locates the best cell per the weighted criterion,
    restricted to bearings whose solved step length and calibrated
    distances stay positive (underdetermined cells are excluded); a zoom
    refinement then polishes the bearing to ``config.refine_tol``. Raises
    InfeasibleError when no bearing is feasible for this pair.
    """
    result = search_gamma_batch(ranges, accumulators, [pair], config=config, scan=scan)[0]
    if isinstance(result, InfeasibleError):
        raise result
    return result


def initial_positions_batch(
    scan: GammaScan,
    batch: _PairBatch,
    step_length: float,
    bias: float,
) -> np.ndarray:
    """Recover z1 for every pair in the batch with shared (d, b).

    Same normal equations as :func:`solve_initial_position`, vectorized
    across pairs; rank-deficient pairs come back as NaN rows.
    """
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    dc, ds = batch._fc, batch._fs  # (L, 2*Nv): [block a1 | block a2]
    g = (batch._dq - 2.0 * bias * batch._dr - batch._eta * step_length**2) / (
        2.0 * step_length
    )
    h11 = np.einsum("ln,ln->l", dc, dc)
    h12 = np.einsum("ln,ln->l", dc, ds)
    h22 = np.einsum("ln,ln->l", ds, ds)
    g1 = np.einsum("ln,ln->l", dc, g)
    g2 = np.einsum("ln,ln->l", ds, g)
    det = h11 * h22 - h12 * h12
    trace = h11 + h22
    solvable = det > (RANK_RATIO**2) * trace * trace
    safe = np.where(solvable, det, 1.0)
    q1 = (h22 * g1 - h12 * g2) / safe
    u1 = (h11 * g2 - h12 * g1) / safe
    out = np.stack([q1, u1], axis=1)
    out[~solvable] = np.nan
    return out


def solve_initial_position(
    ranges,
    accumulators: DirectionAccumulators,
    pair: ReferenceStepPair,
    step_length: float,
    bias: float,
) -> np.ndarray:
    """Recover z1 = [q1, u1] given (d, b) by stacking, for both reference
    steps, the linear relations (c_n - c_a)*q1 + (s_n - s_a)*u1 = g_{n,a}.

    Requires genuinely turning headings: on a straight walk the second
    column is identically zero and the system is rank deficient.
    """
    if step_length <= 0:
        raise ValueError(f"step length must be positive, got {step_length}")
    r = np.asarray(ranges, dtype=float)
    valid = _valid_indices(r)
    c, s = accumulators.cos_sums, accumulators.sin_sums
    sq = accumulators.squared_norms
    blocks_h = []
    blocks_g = []
    for a in pair.as_tuple():
        ai = a - 1
        others = valid[valid != a]
        idx = others - 1
        blocks_h.append(np.stack([c[idx] - c[ai], s[idx] - s[ai]], axis=1))
        blocks_g.append(
            (
                r[idx] ** 2
                - r[ai] ** 2
                - 2.0 * bias * (r[idx] - r[ai])
                - (sq[idx] - sq[ai]) * step_length**2
            )
            / (2.0 * step_length)
        )
    h = np.concatenate(blocks_h, axis=0)
    g = np.concatenate(blocks_g, axis=0)
    sv = np.linalg.svd(h, compute_uv=False)
    if sv[0] <= 0 or sv[1] <= RANK_RATIO * sv[0]:
        raise RankDeficientError(
            "initial-position system is rank deficient (headings never leave "
            "the initial line)"
        )
    solution, *_ = np.linalg.lstsq(h, g, rcond=None)
    return solution
