"""SCAD and MCP penalties and their closed-form thresholding operators.

The scalar kernels are compiled with numba so that the coordinate-descent
solvers can call them from inside their own compiled loops.  Penalty kinds
are passed to kernels as integer codes (``MCP_CODE``, ``SCAD_CODE``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from .exceptions import NonconvexSubproblemError, PenaltyDomainError

MCP_CODE = 0
SCAD_CODE = 1

DEFAULT_GAMMA = 2.4


class PenaltyKind(str, enum.Enum):
    MCP = "mcp"
    SCAD = "scad"

    @property
    def code(self) -> int:
        return MCP_CODE if self is PenaltyKind.MCP else SCAD_CODE


@dataclass(frozen=True)
class PenaltySpec:
    """A concave penalty ``p_{lam,gamma}``.

    MCP needs ``gamma > 2`` and SCAD ``gamma > 1``; ``lam`` must be nonnegative.
    """

    kind: PenaltyKind
    lam: float
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        kind = PenaltyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not np.isfinite(self.lam) or self.lam < 0:
            raise PenaltyDomainError(f"lambda must be a finite nonnegative number, got {self.lam}")
        if kind is PenaltyKind.MCP and not self.gamma > 2:
            raise PenaltyDomainError(f"MCP requires gamma > 2, got {self.gamma}")
        if kind is PenaltyKind.SCAD and not self.gamma > 1:
            raise PenaltyDomainError(f"SCAD requires gamma > 1, got {self.gamma}")

    @property
    def convexity_bound(self) -> float:
        """Curvature a quadratic needs to keep ``a/2 u^2 + p(u)`` convex."""
        return convexity_bound(self.kind.code, self.gamma)

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, lam, self.gamma)


@njit(cache=True)
def convexity_bound(kind: int, gamma: float) -> float:
    if kind == MCP_CODE:
        return 1.0 / gamma
    return 1.0 / (gamma - 1.0)


@njit(cache=True)
def _value(kind: int, lam: float, gamma: float, u: float) -> float:
    if kind == MCP_CODE:
        if u <= gamma * lam:
            return lam * u - u * u / (2.0 * gamma)
        return 0.5 * gamma * lam * lam
    if u <= lam:
        return lam * u
    if u <= gamma * lam:
        return (gamma * lam * u - 0.5 * (u * u + lam * lam)) / (gamma - 1.0)
    return lam * lam * (gamma * gamma - 1.0) / (2.0 * (gamma - 1.0))


@njit(cache=True)
def _derivative(kind: int, lam: float, gamma: float, u: float) -> float:
    if kind == MCP_CODE:
        if u < gamma * lam:
            return lam - u / gamma
        return 0.0
    if u < lam:
        return lam
    if u < gamma * lam:
        return (gamma * lam - u) / (gamma - 1.0)
    return 0.0


@njit(cache=True)
def _second_derivative(kind: int, lam: float, gamma: float, u: float) -> float:
    if kind == MCP_CODE:
        return -1.0 / gamma if u < gamma * lam else 0.0
    if lam < u < gamma * lam:
        return -1.0 / (gamma - 1.0)
    return 0.0


@njit(cache=True)
def threshold_magnitude(kind: int, lam: float, gamma: float, u: float, a: float) -> float:
    """Minimiser over t >= 0 of ``a/2 (t - u)^2 + p(t)`` for ``u >= 0``.

    Callers guarantee ``a > convexity_bound(kind, gamma)``.
    """
    if u <= lam / a:
        return 0.0
    if u > gamma * lam:
        return u
    if kind == MCP_CODE:
        return (u - lam / a) / (1.0 - 1.0 / (gamma * a))
    if u <= lam + lam / a:
        return u - lam / a
    return ((gamma - 1.0) * a * u - gamma * lam) / ((gamma - 1.0) * a - 1.0)


def _check_nonnegative(u: NDArray) -> None:
    if np.any(u < 0) or np.any(np.isnan(u)):
        raise PenaltyDomainError("penalty argument must be nonnegative")


def penalty_value(spec: PenaltySpec, u: ArrayLike) -> float | NDArray:
    """Evaluate ``p_{lam,gamma}(u)``; accepts a scalar or an array of ``u >= 0``."""
    arr = np.asarray(u, dtype=float)
    _check_nonnegative(arr)
    out = np.array([_value(spec.kind.code, spec.lam, spec.gamma, x) for x in arr.ravel()])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def penalty_derivative(spec: PenaltySpec, u: ArrayLike) -> float | NDArray:
    """Right derivative of the penalty: ``lam`` at zero, zero beyond ``gamma*lam``."""
    arr = np.asarray(u, dtype=float)
    _check_nonnegative(arr)
    out = np.array([_derivative(spec.kind.code, spec.lam, spec.gamma, x) for x in arr.ravel()])
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _check_curvature(spec: PenaltySpec, a: float) -> None:
    if not a > spec.convexity_bound:
        raise NonconvexSubproblemError(
            f"curvature a={a:.6g} does not exceed the {spec.kind.value.upper()} "
            f"convexity bound {spec.convexity_bound:.6g}"
        )


def scalar_threshold(spec: PenaltySpec, v: float, a: float = 1.0) -> float:
    """Global minimiser of ``a/2 (theta - v)^2 + p(|theta|)``.

    Firm thresholding for MCP and the three-piece rule for SCAD.  The result
    is zero iff ``|v| <= lam/a`` and equals ``v`` once ``|v| > gamma*lam``.
    """
    _check_curvature(spec, a)
    mag = threshold_magnitude(spec.kind.code, spec.lam, spec.gamma, abs(float(v)), float(a))
    return float(np.copysign(mag, v)) if mag > 0 else 0.0


def group_threshold(spec: PenaltySpec, v: ArrayLike, a: float = 1.0) -> NDArray[np.float64]:
    """Minimiser of ``a/2 ||theta - v||^2 + p(||theta||)``: ``v`` rescaled radially."""
    _check_curvature(spec, a)
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    mag = threshold_magnitude(spec.kind.code, spec.lam, spec.gamma, norm, float(a))
    return v * (mag / norm)
