"""Refining stage: locate each threshold inside its candidate window by a
two-sided weighted least-squares scan, then fit the final sparse
coefficients at the refined thresholds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from numpy.typing import NDArray

from .censored import TOL_SINGULAR, SurvivalDataset, partition_by_thresholds
from .exceptions import DegenerateWindowError, InvalidThresholdsError
from .penalty import PenaltySpec
from .splitting import BlockProblem, Segmentation, cumulative_design


def min_side_events(p: int) -> int:
    return max(p + 2, 5)


@dataclass(frozen=True, eq=False)
class RefineWindow:
    """Half-open z-interval ``(lower, upper]`` around a candidate segment.

    ``rows`` are the window's observations sorted by z; ``cuts[i]`` is the
    number of leading rows that fall at or below ``candidate_zs[i]``.
    """

    lower: float
    upper: float
    rows: NDArray[np.intp]
    candidate_zs: NDArray[np.float64]
    cuts: NDArray[np.intp]


def window_from_bounds(data: SurvivalDataset, lower: float, upper: float,
                       min_events: int | None = None) -> RefineWindow:
    if min_events is None:
        min_events = min_side_events(data.p)
    inside = np.flatnonzero((data.z > lower) & (data.z <= upper))
    rows = inside[np.lexsort((inside, data.z[inside]))]
    zs = data.z[rows]
    ev_left = np.cumsum(data.delta[rows])
    total = int(ev_left[-1]) if rows.size else 0
    # a cut after position c-1 is a split point only where z strictly increases
    c = np.arange(1, rows.size + 1)
    distinct = np.append(zs[1:] > zs[:-1], True)
    ok = distinct & (ev_left >= min_events) & (total - ev_left >= min_events)
    return RefineWindow(float(lower), float(upper), rows, zs[ok], c[ok].astype(np.intp))


def candidate_window(data: SurvivalDataset, seg: Segmentation, k_hat: int,
                     min_events: int | None = None) -> RefineWindow:
    """Window spanning segments ``k_hat - 1`` and ``k_hat`` (1-based group number)."""
    n_star = seg.event_z.size
    q, m = seg.q, seg.m
    if not 2 <= k_hat <= q + 1:
        raise ValueError(f"candidate group {k_hat} outside 2..{q + 1}")
    lower = seg.event_order_stat(n_star - (q - k_hat + 3) * m)
    upper = np.inf if k_hat == q + 1 else seg.event_order_stat(n_star - (q - k_hat + 1) * m)
    return window_from_bounds(data, lower, upper, min_events)


@njit(cache=True)
def _side_loss(y, d, X, yorder, cut, left, w):
    """Weighted RSS of the Stute fit on one side of ``cut``; inf when unfittable."""
    p = X.shape[1]
    b = 0
    for t in range(yorder.size):
        if (yorder[t] < cut) == left:
            b += 1
    surv = 1.0
    run_surv = 1.0
    run_risk = 1.0
    in_run = False
    l = 0
    G = np.zeros((p, p))
    h = np.zeros(p)
    npos = 0
    for t in range(yorder.size):
        pos = yorder[t]
        if (pos < cut) != left:
            w[t] = 0.0
            continue
        l += 1
        if d[pos] == 1:
            if not in_run:
                # same run-wise telescoped form as km_weights
                in_run = True
                run_surv = surv
                run_risk = b - l + 1.0
            wt = run_surv / run_risk
            surv = run_surv * (b - l) / run_risk
        else:
            in_run = False
            wt = 0.0
        w[t] = wt
        if wt > 0.0:
            npos += 1
            for k in range(p):
                h[k] += wt * X[pos, k] * y[pos]
                for j in range(p):
                    G[k, j] += wt * X[pos, k] * X[pos, j]
    if npos < p:
        return np.inf, b
    eig = np.linalg.eigvalsh(G)
    if eig[p - 1] <= 0.0 or eig[0] / eig[p - 1] < TOL_SINGULAR:
        return np.inf, b
    beta = np.linalg.solve(G, h)
    rss = 0.0
    for t in range(yorder.size):
        if w[t] > 0.0:
            pos = yorder[t]
            e = y[pos]
            for k in range(p):
                e -= X[pos, k] * beta[k]
            rss += w[t] * e * e
    return rss, b


@njit(cache=True)
def _scan(y, d, X, yorder, cuts):
    W = yorder.size
    w = np.empty(W)
    out = np.empty(cuts.size)
    for i in range(cuts.size):
        rl, bl = _side_loss(y, d, X, yorder, cuts[i], True, w)
        rr, br = _side_loss(y, d, X, yorder, cuts[i], False, w)
        out[i] = (bl * rl + br * rr) / W
    return out


def window_losses(data: SurvivalDataset, window: RefineWindow) -> NDArray[np.float64]:
    """Two-sided criterion for every admissible split point of the window."""
    rows = window.rows
    y = np.ascontiguousarray(data.y[rows])
    d = np.ascontiguousarray(data.delta[rows])
    X = np.ascontiguousarray(data.X[rows])
    local = np.arange(rows.size)
    yorder = local[np.lexsort((rows, 1 - d, y))]
    return _scan(y, d, X, yorder, window.cuts)


TIE_RTOL = 1e-11


def refine_threshold(data: SurvivalDataset, window: RefineWindow) -> tuple[float, float]:
    """Return ``(a_hat, Q_min)``: the split point with the smallest two-sided loss.

    Losses equal up to rounding (``TIE_RTOL`` times the mean squared
    response in the window) resolve to the smaller z.  Raises
    ``DegenerateWindowError`` when no split point is admissible or every
    split is unfittable.
    """
    if window.cuts.size == 0:
        raise DegenerateWindowError(
            f"no admissible split point in ({window.lower:.6g}, {window.upper:.6g}]"
        )
    q = window_losses(data, window)
    if not np.isfinite(q).any():
        raise DegenerateWindowError("every split point gives a singular side fit")
    # censored points next to a jump carry no weight, so exact fits tie over a run of z
    tol = TIE_RTOL * float(np.mean(data.y[window.rows] ** 2))
    i = int(np.flatnonzero(q <= np.min(q) + tol)[0])
    return float(window.candidate_zs[i]), float(q[i])


def subgroup_index_sets(data: SurvivalDataset, a_hat: Sequence[float]) -> tuple[NDArray[np.intp], ...]:
    a = np.asarray(a_hat, dtype=float)
    if a.size and np.any(np.diff(a) <= 0):
        raise InvalidThresholdsError("thresholds must be strictly increasing")
    labels = partition_by_thresholds(data.z, a)
    sets = tuple(np.flatnonzero(labels == j) for j in range(a.size + 1))
    for j, s in enumerate(sets):
        if s.size == 0 or data.delta[s].sum() == 0:
            raise InvalidThresholdsError(f"subgroup {j + 1} has no events")
    return sets


@dataclass(frozen=True, eq=False)
class FinalFit:
    theta_star: NDArray[np.float64]
    beta_by_group: NDArray[np.float64]
    lam: float
    converged: bool
    n_iter: int
    objective_trace: NDArray[np.float64]


def subgroup_coefficients(theta_star: NDArray, p: int) -> NDArray[np.float64]:
    """Per-subgroup coefficients ``beta_j = beta_1 + d_1 + ... + d_{j-1}``, shape (s+1, p)."""
    return np.cumsum(np.asarray(theta_star, dtype=float).reshape(-1, p), axis=0)


def coefficient_increments(beta_by_group: NDArray) -> NDArray[np.float64]:
    b = np.asarray(beta_by_group, dtype=float)
    return np.concatenate([b[:1], np.diff(b, axis=0)]).ravel()


def segmented_problem(data: SurvivalDataset, a_hat: Sequence[float]) -> BlockProblem:
    """Element-wise penalised problem over the subgroups induced by ``a_hat``."""
    design = cumulative_design(data, subgroup_index_sets(data, a_hat))
    return BlockProblem(design.y, design.X, group_size=1,
                        starts=np.repeat(design.starts, data.p), n_free=0)


def final_penalized_fit(data: SurvivalDataset, a_hat: Sequence[float], spec: PenaltySpec,
                        tol: float = 1e-6, max_iter: int = 1000,
                        problem: BlockProblem | None = None,
                        theta0: NDArray | None = None) -> FinalFit:
    """Coordinate-descent fit of the segmented Stute loss with every coefficient penalised.

    Starts from the unpenalised segmented least-squares solution unless
    ``theta0`` is given.
    """
    if problem is None:
        problem = segmented_problem(data, a_hat)
    if theta0 is None:
        theta0 = np.linalg.lstsq(problem.X, problem.y, rcond=None)[0]
    theta, trace, converged, n_iter = problem.solve(spec, theta0, tol, max_iter)
    return FinalFit(theta, subgroup_coefficients(theta, data.p), spec.lam, converged, n_iter, trace)
