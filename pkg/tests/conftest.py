"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from threshold_aft import SurvivalDataset


def random_dataset(rng: np.random.Generator, n: int, p: int = 3, censor_rate: float = 0.3,
                   ties: bool = False) -> SurvivalDataset:
    """Intercept plus ``p - 1`` normal regressors, z uniform, random censoring."""
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    if ties:
        y = np.round(y, 0)
    delta = (rng.random(n) > censor_rate).astype(int)
    if delta.sum() == 0:
        delta[rng.integers(n)] = 1
    z = rng.uniform(-1, 1, n)
    return SurvivalDataset(y, delta, X, z)


def product_limit_jumps(y: np.ndarray, delta: np.ndarray) -> dict[float, float]:
    """Jump of the product-limit failure-time estimate at each distinct event time."""
    out = {}
    surv = 1.0
    for t in np.unique(y[delta == 1]):
        at_risk = np.sum(y >= t)
        deaths = np.sum((y == t) & (delta == 1))
        new = surv * (1.0 - deaths / at_risk)
        out[float(t)] = surv - new
        surv = new
    return out


def brute_wls(y: np.ndarray, X: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    """Weighted least squares through the normal equations."""
    G = (X * w[:, None]).T @ X
    beta = np.linalg.solve(G, (X * w[:, None]).T @ y)
    r = y - X @ beta
    return beta, float(np.sum(w * r * r))


def noiseless_threshold_data(n: int = 240, thresholds=(-0.3, 0.4), seed: int = 0,
                             censor: bool = True) -> tuple[SurvivalDataset, np.ndarray]:
    """Piecewise-linear responses without noise; returns the data and true theta."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal(n), rng.standard_normal(n)])
    z = rng.uniform(-1, 1, n)
    theta = np.array([1.0, 0.5, -0.5, 2.0, 0.0, 0.0, -1.5, 1.0, 0.0])[: 3 * (len(thresholds) + 1)]
    beta = np.cumsum(theta.reshape(-1, 3), axis=0)
    g = np.searchsorted(np.asarray(thresholds), z, side="left")
    y = np.einsum("ij,ij->i", X, beta[g])
    delta = (rng.random(n) > 0.25).astype(int) if censor else np.ones(n, dtype=int)
    return SurvivalDataset(y, delta, X, z), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
