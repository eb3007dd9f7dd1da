"""Censored-data primitives: the survival dataset container, Kaplan-Meier
(Stute) weights and the weighted least-squares fitter used by every stage.

All responses are on the log-time scale.  Weights are computed within an
arbitrary index subset, so the same observation can carry different weights
depending on which segment or subgroup it is fitted in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import InsufficientEventsError, InvalidSubsetError, SingularDesignError

#: reciprocal condition number below which a weighted Gram matrix is singular
TOL_SINGULAR = 1e-10


def _readonly(a: NDArray) -> NDArray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored log-time responses with regressors and a threshold variable.

    Parameters
    ----------
    y : array of shape (n,)
        Observed log follow-up times ``min(t, c)``.
    delta : array of shape (n,)
        Event indicators (1 = failure observed, 0 = censored).
    X : array of shape (n, p)
        Regressors; the first column is usually an intercept of ones.
    z : array of shape (n,)
        Thresholding variable.  Often a column of ``X`` or the observation index.
    names : sequence of str, optional
        Column names of ``X``, used only for reporting.
    """

    y: NDArray[np.float64]
    delta: NDArray[np.int8]
    X: NDArray[np.float64]
    z: NDArray[np.float64]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        raw_delta = np.asarray(self.delta).ravel()
        n = y.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one observation")
        if raw_delta.shape[0] != n or z.shape[0] != n or X.shape[0] != n:
            raise ValueError(
                f"length mismatch: y={n}, delta={raw_delta.shape[0]}, "
                f"z={z.shape[0]}, X rows={X.shape[0]}"
            )
        if X.shape[1] < 1:
            raise ValueError("X must have at least one column")
        if not np.all((raw_delta == 0) | (raw_delta == 1)):
            raise ValueError("delta entries must be exactly 0 or 1")
        if raw_delta.sum() < 1:
            raise ValueError("at least one observation must be an event")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z)) and np.all(np.isfinite(X))):
            raise ValueError("y, z and X must be finite")
        names = tuple(self.names) if self.names else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("names must match the number of columns of X")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "delta", _readonly(raw_delta.astype(np.int8)))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.delta.sum())

    def take(self, idx: ArrayLike) -> "SurvivalDataset":
        """Return the rows ``idx`` (repeats allowed) as a new dataset."""
        idx = np.asarray(idx, dtype=np.intp)
        return SurvivalDataset(self.y[idx], self.delta[idx], self.X[idx], self.z[idx], self.names)


@dataclass(frozen=True, eq=False)
class KaplanMeierWeights:
    """Stute weights of an index subset.

    ``order[l]`` is the original index of the ``l``-th smallest response in the
    subset and ``w[l]`` its weight.
    """

    order: NDArray[np.intp]
    w: NDArray[np.float64]

    def by_index(self) -> dict[int, float]:
        return dict(zip(self.order.tolist(), self.w.tolist()))


@dataclass(frozen=True, eq=False)
class WlsFit:
    beta: NDArray[np.float64]
    weighted_rss: float
    n_events: int


def km_weights(delta_ordered: ArrayLike, b: int | None = None) -> NDArray[np.float64]:
    """Kaplan-Meier jump weights of an already y-sorted indicator sequence.

    ``w_1 = delta_1 / b`` and, for ``l >= 2``,
    ``w_l = delta_l / (b - l + 1) * prod_{k < l} ((b - k) / (b - k + 1)) ** delta_k``.
    The weights equal the jumps of the product-limit estimator of the
    failure-time distribution, so censored positions get zero weight and the
    weights sum to ``1 - S_KM(max y)``.
    """
    d = np.asarray(delta_ordered, dtype=float).ravel()
    if d.size == 0:
        raise InvalidSubsetError("cannot compute Kaplan-Meier weights of an empty subset")
    if b is not None and b != d.size:
        raise InvalidSubsetError(f"b={b} does not match the subset size {d.size}")
    b = d.size
    # inside a run of consecutive events the product telescopes, so each event
    # of the run carries S(run start) / (b - start + 1); all events give 1/b exactly
    w = np.zeros(b)
    surv = 1.0
    l = 0
    while l < b:
        if d[l] == 0:
            l += 1
            continue
        start = l
        while l < b and d[l] > 0:
            l += 1
        at_risk = b - start
        w[start:l] = surv / at_risk
        surv *= (b - l) / at_risk
    return w


def sort_order(y: NDArray, delta: NDArray, idx: NDArray) -> NDArray[np.intp]:
    """Ascending-y order of ``idx``; ties put events first, then original index."""
    return idx[np.lexsort((idx, 1 - delta[idx], y[idx]))]


def _as_index(data: SurvivalDataset, idx: ArrayLike) -> NDArray[np.intp]:
    idx = np.asarray(idx)
    if idx.dtype == bool:
        if idx.shape != (data.n,):
            raise InvalidSubsetError("boolean mask must have length n")
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.intp, copy=False).ravel()
    if idx.size == 0:
        raise InvalidSubsetError("index set is empty")
    if idx.min() < 0 or idx.max() >= data.n:
        raise InvalidSubsetError("index set contains out-of-range indices")
    return idx


def order_subset(data: SurvivalDataset, idx: ArrayLike) -> KaplanMeierWeights:
    """Sort the subset by response and attach its Kaplan-Meier weights."""
    idx = _as_index(data, idx)
    order = sort_order(data.y, data.delta, idx)
    return KaplanMeierWeights(order=order, w=km_weights(data.delta[order]))


def subset_weights(data: SurvivalDataset, idx: ArrayLike) -> NDArray[np.float64]:
    """Weights of ``idx`` aligned with ``idx`` itself rather than with the y-order."""
    idx = _as_index(data, idx)
    perm = np.lexsort((idx, 1 - data.delta[idx], data.y[idx]))
    w = np.empty(idx.size)
    w[perm] = km_weights(data.delta[idx[perm]])
    return w


def weighted_lstsq(y: NDArray, X: NDArray, w: NDArray) -> tuple[NDArray, float]:
    """Minimise ``sum w (y - X beta)^2`` through an SVD of the scaled design.

    Rows with zero weight are dropped.  Raises ``InsufficientEventsError`` when
    fewer than ``p`` rows carry weight and ``SingularDesignError`` when the
    weighted Gram matrix has reciprocal condition number below
    ``TOL_SINGULAR``.
    """
    p = X.shape[1]
    keep = w > 0
    n_pos = int(keep.sum())
    if n_pos < p:
        raise InsufficientEventsError(
            f"{n_pos} positively weighted observations for {p} coefficients"
        )
    sw = np.sqrt(w[keep])
    A = X[keep] * sw[:, None]
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0.0 or (s[-1] / s[0]) ** 2 < TOL_SINGULAR:
        raise SingularDesignError(
            f"weighted Gram matrix is singular on a subset of {y.shape[0]} observations",
            subset_size=int(y.shape[0]),
        )
    beta = vt.T @ ((u.T @ (y[keep] * sw)) / s)
    resid = y[keep] - X[keep] @ beta
    return beta, float(np.sum(w[keep] * resid**2))


def stute_wls(data: SurvivalDataset, idx: ArrayLike | None = None) -> WlsFit:
    """Stute weighted least-squares fit restricted to ``idx`` (default: all rows)."""
    if idx is None:
        idx = np.arange(data.n)
    km = order_subset(data, idx)
    o = km.order
    beta, rss = weighted_lstsq(data.y[o], data.X[o], km.w)
    return WlsFit(beta=beta, weighted_rss=rss, n_events=int(data.delta[o].sum()))


def partition_by_thresholds(z: NDArray, thresholds: Sequence[float]) -> NDArray[np.intp]:
    """Subgroup label of every observation: label j means a_{j} < z <= a_{j+1}."""
    return np.searchsorted(np.asarray(thresholds, dtype=float), z, side="left").astype(np.intp)
