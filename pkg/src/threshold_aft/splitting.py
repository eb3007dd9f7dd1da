"""Splitting stage: event-balanced segmentation of the threshold variable,
the cumulative block design, and penalised group coordinate descent over the
segment increments.

Groups are numbered from 1 in every public structure: group 1 holds the
baseline coefficients of the first segment and group ``j >= 2`` holds the
increment between segments ``j - 1`` and ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve

from .censored import SurvivalDataset, subset_weights
from .exceptions import InsufficientEventsError, InvalidSubsetError, SingularDesignError
from .penalty import (
    PenaltySpec,
    _derivative,
    _second_derivative,
    _value,
    convexity_bound,
    threshold_magnitude,
)

ZERO_GROUP_NORM = 1e-12

#: majorisation constants are raised to this multiple of the convexity bound
CURVATURE_MARGIN = 1.05

#: coordinate sweeps between attempted Newton steps
NEWTON_EVERY = 10


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Partition of the sample into ``q + 1`` segments along ``z``.

    The last ``q`` segments contain ``m`` events each; the first one takes the
    remaining ``n* - q m`` events.  ``boundaries[i]`` is the upper edge of
    segment ``i + 1`` (1-based); the last segment is open above.
    """

    m: int
    q: int
    boundaries: NDArray[np.float64]
    index_sets: tuple[NDArray[np.intp], ...]
    event_counts: NDArray[np.intp]
    event_z: NDArray[np.float64]

    @property
    def n_segments(self) -> int:
        return self.q + 1

    def labels(self, z: NDArray) -> NDArray[np.intp]:
        """0-based segment of each z value."""
        return np.searchsorted(self.boundaries, z, side="left").astype(np.intp)

    def event_order_stat(self, k: int) -> float:
        """The k-th smallest event z (1-based); -inf below 1 and +inf above n*."""
        if k < 1:
            return -np.inf
        if k > self.event_z.size:
            return np.inf
        return float(self.event_z[k - 1])


def build_segments(data: SurvivalDataset, m: int) -> Segmentation:
    m = int(m)
    if m < 1:
        raise ValueError(f"segment event count m must be positive, got {m}")
    n_star = data.n_events
    q = n_star // m - 1
    if q < 1:
        raise InsufficientEventsError(
            f"{n_star} events cannot form two segments of {m} events"
        )
    event_z = np.sort(data.z[data.delta == 1], kind="stable")
    upper_ranks = n_star - m * np.arange(q, 0, -1)
    boundaries = event_z[upper_ranks - 1]
    labels = np.searchsorted(boundaries, data.z, side="left")
    index_sets = tuple(np.flatnonzero(labels == j) for j in range(q + 1))
    if any(s.size == 0 for s in index_sets):
        raise InvalidSubsetError("tied z values produced an empty segment")
    counts = np.array([int(data.delta[s].sum()) for s in index_sets], dtype=np.intp)
    return Segmentation(m, q, boundaries, index_sets, counts, event_z)


def m_for_kappa(kappa: float, n: int) -> int:
    return int(np.floor(kappa * np.sqrt(n)))


@dataclass(frozen=True, eq=False)
class GroupDesign:
    """Weighted response and cumulative block design, rows ordered by segment.

    ``starts[j]`` is the first row at which block column ``j`` (0-based) can
    be nonzero; ``rows`` maps design rows back to dataset indices.
    """

    y: NDArray[np.float64]
    X: NDArray[np.float64]
    starts: NDArray[np.intp]
    rows: NDArray[np.intp]
    group_size: int

    @property
    def n_groups(self) -> int:
        return self.starts.size

    def __iter__(self):
        # allows ``y_tilde, X_tilde = build_group_design(...)``
        return iter((self.y, self.X))


def cumulative_design(
    data: SurvivalDataset, index_sets: tuple[NDArray[np.intp], ...]
) -> GroupDesign:
    """Stack ``sqrt(b_j w)``-scaled segments and zero-pad block ``j`` above segment ``j``."""
    p = data.p
    G = len(index_sets)
    rows = np.concatenate(index_sets)
    n = rows.size
    y_t = np.empty(n)
    Xs = np.empty((n, p))
    starts = np.empty(G, dtype=np.intp)
    at = 0
    for j, idx in enumerate(index_sets):
        scale = np.sqrt(idx.size * subset_weights(data, idx))
        y_t[at:at + idx.size] = scale * data.y[idx]
        Xs[at:at + idx.size] = scale[:, None] * data.X[idx]
        starts[j] = at
        at += idx.size
    X_t = np.zeros((n, G * p))
    for j in range(G):
        X_t[starts[j]:, j * p:(j + 1) * p] = Xs[starts[j]:]
    return GroupDesign(y_t, X_t, starts, rows, p)


def build_group_design(data: SurvivalDataset, seg: Segmentation) -> GroupDesign:
    return cumulative_design(data, seg.index_sets)


def design_starts(X: NDArray, group_size: int) -> NDArray[np.intp]:
    """First row where each block of columns has a nonzero entry."""
    G = X.shape[1] // group_size
    starts = np.zeros(G, dtype=np.intp)
    for j in range(G):
        nz = np.flatnonzero(np.any(X[:, j * group_size:(j + 1) * group_size] != 0, axis=1))
        starts[j] = nz[0] if nz.size else X.shape[0]
    return starts


@njit(cache=True)
def _block_descent(y, X, theta, starts, group_size, n_free, kind, lam, gamma,
                   a, free_inv, tol, max_iter, trace):
    n = y.shape[0]
    G = starts.shape[0]
    p = group_size
    r = y - X @ theta
    grad = np.empty(p)
    v = np.empty(p)
    delta = np.empty(p)
    n_iter = 0
    converged = False
    for it in range(max_iter):
        max_change = 0.0
        for j in range(G):
            s = starts[j]
            c0 = j * p
            for k in range(p):
                grad[k] = 0.0
            for i in range(s, n):
                ri = r[i]
                for k in range(p):
                    grad[k] += X[i, c0 + k] * ri
            for k in range(p):
                grad[k] /= n
            if j < n_free:
                for k in range(p):
                    acc = 0.0
                    for l in range(p):
                        acc += free_inv[j, k, l] * grad[l]
                    delta[k] = acc
            else:
                norm = 0.0
                for k in range(p):
                    v[k] = theta[c0 + k] + grad[k] / a[j]
                    norm += v[k] * v[k]
                norm = np.sqrt(norm)
                scale = 0.0
                if norm > 0.0:
                    mag = threshold_magnitude(kind, lam, gamma, norm, a[j])
                    if mag >= ZERO_GROUP_NORM:
                        scale = mag / norm
                for k in range(p):
                    delta[k] = v[k] * scale - theta[c0 + k]
            change = 0.0
            for k in range(p):
                if abs(delta[k]) > change:
                    change = abs(delta[k])
            if change > 0.0:
                for i in range(s, n):
                    acc = 0.0
                    for k in range(p):
                        acc += X[i, c0 + k] * delta[k]
                    r[i] -= acc
                for k in range(p):
                    theta[c0 + k] += delta[k]
            if change > max_change:
                max_change = change
        obj = 0.0
        for i in range(n):
            obj += r[i] * r[i]
        obj /= 2.0 * n
        for j in range(n_free, G):
            norm = 0.0
            for k in range(p):
                norm += theta[j * p + k] ** 2
            obj += _value(kind, lam, gamma, np.sqrt(norm))
        trace[it] = obj
        n_iter = it + 1
        if max_change < tol:
            converged = True
            break
    return n_iter, converged


class BlockProblem:
    """Least-squares loss ``||y - X theta||^2 / 2n`` with nested column blocks.

    Precomputes per-block curvature so that the same problem can be solved
    along a path of penalty levels.  The first ``n_free`` blocks are left
    unpenalised and minimised exactly at each visit; all other blocks receive
    the penalty on their Euclidean norm.
    """

    def __init__(self, y: NDArray, X: NDArray, group_size: int,
                 starts: NDArray | None = None, n_free: int = 1):
        self.y = np.ascontiguousarray(y, dtype=float)
        self.X = np.ascontiguousarray(X, dtype=float)
        self.group_size = int(group_size)
        if self.X.shape[1] % self.group_size:
            raise ValueError("number of columns must be a multiple of group_size")
        self.starts = (design_starts(self.X, self.group_size) if starts is None
                       else np.ascontiguousarray(starts, dtype=np.intp))
        self.n_free = int(n_free)
        n = self.y.size
        p = self.group_size
        G = self.starts.size
        self.curvature = np.empty(G)
        self.free_inv = np.zeros((max(self.n_free, 1), p, p))
        self._gram = None
        for j in range(G):
            B = self.X[self.starts[j]:, j * p:(j + 1) * p]
            H = B.T @ B / n
            eig = np.linalg.eigvalsh(H)
            self.curvature[j] = eig[-1]
            if j < self.n_free:
                if eig[-1] <= 0 or eig[0] / eig[-1] < 1e-10:
                    raise SingularDesignError(
                        "unpenalised block has a singular Gram matrix", subset_size=n - self.starts[j]
                    )
                self.free_inv[j] = np.linalg.inv(H)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_groups(self) -> int:
        return self.starts.size

    def null_theta(self) -> NDArray:
        """Exact minimiser with every penalised block at zero."""
        p = self.group_size
        theta = np.zeros(self.X.shape[1])
        if self.n_free:
            k = self.n_free * p
            theta[:k] = np.linalg.lstsq(self.X[:, :k], self.y, rcond=None)[0]
        return theta

    def block_gradients(self, theta: NDArray) -> NDArray:
        """``B_j' (y - X theta) / n`` for every block, shape (G, p)."""
        r = self.y - self.X @ theta
        return (self.X.T @ r / self.n).reshape(self.n_groups, self.group_size)

    def lambda_max(self) -> float:
        """Smallest penalty level at which the null fit satisfies all zero-block KKT conditions."""
        g = self.block_gradients(self.null_theta())[self.n_free:]
        if self.group_size == 1:
            return float(np.max(np.abs(g))) if g.size else 0.0
        return float(np.max(np.linalg.norm(g, axis=1))) if g.size else 0.0

    def objective(self, theta: NDArray, spec: PenaltySpec) -> float:
        r = self.y - self.X @ theta
        norms = np.linalg.norm(theta.reshape(self.n_groups, self.group_size)[self.n_free:], axis=1)
        pen = sum(_value(spec.kind.code, spec.lam, spec.gamma, float(u)) for u in norms)
        return float(r @ r / (2 * self.n) + pen)

    def majorizers(self, spec: PenaltySpec) -> NDArray:
        floor = CURVATURE_MARGIN * convexity_bound(spec.kind.code, spec.gamma)
        return np.maximum(self.curvature, floor)

    @property
    def gram(self) -> NDArray:
        if self._gram is None:
            self._gram = self.X.T @ self.X / self.n
        return self._gram

    def _newton(self, theta: NDArray, spec: PenaltySpec, obj: float) -> tuple[NDArray, float] | None:
        """Safeguarded Newton step on the nonzero blocks, or None if it does not descend."""
        p = self.group_size
        groups = theta.reshape(self.n_groups, p)
        act = [j for j in range(self.n_groups) if j < self.n_free or np.any(groups[j] != 0)]
        if not act:
            return None
        cols = (np.asarray(act)[:, None] * p + np.arange(p)).ravel()
        r = self.y - self.X @ theta
        grad = -(self.X[:, cols].T @ r) / self.n
        H = self.gram[np.ix_(cols, cols)].copy()
        code = spec.kind.code
        for pos, j in enumerate(act):
            if j < self.n_free:
                continue
            sl = slice(pos * p, (pos + 1) * p)
            u = float(np.linalg.norm(groups[j]))
            v = groups[j] / u
            d1 = _derivative(code, spec.lam, spec.gamma, u)
            d2 = _second_derivative(code, spec.lam, spec.gamma, u)
            grad[sl] += d1 * v
            H[sl, sl] += d2 * np.outer(v, v) + (d1 / u) * (np.eye(p) - np.outer(v, v))
        try:
            step = -cho_solve(cho_factor(H), grad)
        except np.linalg.LinAlgError:
            return None
        for t in (1.0, 0.5, 0.25):
            cand = theta.copy()
            cand[cols] += t * step
            new_obj = self.objective(cand, spec)
            if new_obj < obj:
                return cand, new_obj
        return None

    def solve(self, spec: PenaltySpec, theta0: NDArray | None = None,
              tol: float = 1e-6, max_iter: int = 1000):
        """Block coordinate descent, interleaved with Newton steps on the active blocks.

        Returns ``(theta, objective_trace, converged, n_sweeps)``.
        """
        theta = self.null_theta() if theta0 is None else np.array(theta0, dtype=float)
        a = self.majorizers(spec)
        trace_parts = []
        done = 0
        converged = False
        chunk = NEWTON_EVERY
        while done < max_iter:
            trace = np.empty(min(chunk, max_iter - done))
            n_iter, converged = _block_descent(
                self.y, self.X, theta, self.starts, self.group_size, self.n_free,
                spec.kind.code, spec.lam, spec.gamma, a, self.free_inv,
                float(tol), trace.size, trace,
            )
            done += n_iter
            trace_parts.append(trace[:n_iter])
            if converged or done >= max_iter:
                break
            stepped = self._newton(theta, spec, float(trace[n_iter - 1]))
            if stepped is not None:
                theta[:] = stepped[0]
                trace_parts.append(np.array([stepped[1]]))
        return theta, np.concatenate(trace_parts), bool(converged), int(done)


@dataclass(frozen=True, eq=False)
class GroupSolution:
    theta: NDArray[np.float64]
    group_size: int
    lam: float
    active: tuple[int, ...]
    candidates: tuple[int, ...]
    objective_trace: NDArray[np.float64]
    converged: bool
    n_iter: int
    kkt_max: float

    @property
    def s_hat(self) -> int:
        return len(self.candidates)

    @property
    def groups(self) -> NDArray[np.float64]:
        return self.theta.reshape(-1, self.group_size)


def active_groups(theta: NDArray, group_size: int) -> tuple[int, ...]:
    groups = np.asarray(theta).reshape(-1, group_size)
    return tuple(int(j) + 1 for j in np.flatnonzero(np.any(groups != 0, axis=1)))


def candidate_groups(active) -> tuple[int, ...]:
    """Leading group of every run of consecutive active increments."""
    act = set(active)
    return tuple(j for j in sorted(act) if j >= 2 and (j - 1) not in act)


def extract_candidates(sol: GroupSolution | tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    """Return ``(s_hat, k_hat)``; ``s_hat == 0`` declares no threshold."""
    active = sol.active if isinstance(sol, GroupSolution) else tuple(sol)
    k_hat = candidate_groups(active)
    return len(k_hat), k_hat


def _solution(problem: BlockProblem, spec: PenaltySpec, theta, trace, converged, n_iter):
    g = problem.block_gradients(theta)
    groups = theta.reshape(problem.n_groups, problem.group_size)
    zero = np.all(groups == 0, axis=1)
    zero[:problem.n_free] = False
    kkt = float(np.max(np.linalg.norm(g[zero], axis=1))) if zero.any() else 0.0
    active = active_groups(theta, problem.group_size)
    return GroupSolution(theta, problem.group_size, spec.lam, active, candidate_groups(active),
                         trace, converged, n_iter, kkt)


def group_coordinate_descent(
    y_tilde: NDArray,
    X_tilde: NDArray,
    spec: PenaltySpec,
    group_size: int,
    tol: float = 1e-6,
    max_iter: int = 1000,
    theta0: NDArray | None = None,
    starts: NDArray | None = None,
) -> GroupSolution:
    """Minimise ``||y - X theta||^2 / 2n + sum_{j >= 2} p(||theta_j||)``.

    Group 1 is unpenalised and refitted exactly at each visit; every other
    group takes a majorised step followed by group thresholding.  The
    default start is the exact fit with all increments at zero.
    """
    problem = BlockProblem(y_tilde, X_tilde, group_size, starts=starts, n_free=1)
    theta, trace, converged, n_iter = problem.solve(spec, theta0, tol, max_iter)
    return _solution(problem, spec, theta, trace, converged, n_iter)


def lambda_grid(lam_max: float, size: int = 50, min_ratio: float = 0.01) -> NDArray:
    """Descending log-spaced grid from ``lam_max`` to ``min_ratio * lam_max``."""
    if size == 1:
        return np.array([lam_max])
    return lam_max * np.logspace(0.0, np.log10(min_ratio), size)


def solve_path(problem: BlockProblem, spec: PenaltySpec, lambdas,
               tol: float = 1e-6, max_iter: int = 1000) -> list[GroupSolution]:
    """Warm-started solutions along ``lambdas`` (expected in descending order)."""
    out = []
    theta = problem.null_theta()
    for lam in lambdas:
        s = spec.with_lambda(float(lam))
        theta, trace, converged, n_iter = problem.solve(s, theta, tol, max_iter)
        out.append(_solution(problem, s, theta, trace, converged, n_iter))
        theta = theta.copy()
    return out
