"""Tuning-parameter selection and the end-to-end two-stage estimator.

For every segment length ``m = floor(kappa * sqrt(n))`` on the kappa grid,
the splitting stage is solved along a descending lambda path.  Each lambda's
candidate segments are refined into thresholds and scored by BIC; the best
(kappa, lambda) pair determines the thresholds, and the final sparse
coefficients are fitted at those thresholds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .censored import SurvivalDataset, stute_wls
from .exceptions import (
    DegenerateWindowError,
    InfeasibleConfigError,
    InsufficientEventsError,
    InvalidSubsetError,
    InvalidThresholdsError,
    SingularDesignError,
    ThresholdAFTError,
)
from .penalty import DEFAULT_GAMMA, PenaltyKind, PenaltySpec
from .refining import (
    candidate_window,
    final_penalized_fit,
    min_side_events,
    refine_threshold,
    segmented_problem,
    subgroup_index_sets,
)
from .splitting import (
    BlockProblem,
    GroupSolution,
    Segmentation,
    build_group_design,
    build_segments,
    lambda_grid,
    solve_path,
)

log = logging.getLogger(__name__)

#: relative floor on the pooled weighted RSS inside the logarithm of the BIC
RSS_FLOOR = 1e-12
#: extended-BIC exponent used to pick the final-fit lambda
EBIC_GAMMA = 0.5

FINAL_LAMBDA_RULES = ("ebic", "bic", "splitting")
DEFAULT_KAPPAS = tuple(float(k) for k in np.round(np.linspace(0.1, 2.0, 20), 10))


@dataclass(frozen=True)
class TuningConfig:
    """Grids and solver settings for :func:`tsmcd`.

    ``final_lambda`` chooses the penalty level of the final coefficient fit:
    ``"ebic"`` selects it on its own path by extended BIC (exponent
    ``EBIC_GAMMA`` over the ``(s+1) p`` candidate coefficients), ``"bic"`` by
    plain BIC, ``"splitting"`` reuses the level selected in the splitting
    stage, and a number fixes it.
    """

    kappa_grid: tuple[float, ...] = DEFAULT_KAPPAS
    lambda_grid_size: int = 50
    lambda_min_ratio: float = 0.01
    penalty_kind: PenaltyKind = PenaltyKind.MCP
    gamma: float = DEFAULT_GAMMA
    tol: float = 1e-6
    max_iter: int = 1000
    seed: int = 0
    m_rule: str = "sqrt-n"
    min_side_events: int | None = None
    lambda_grid: tuple[float, ...] | None = None
    final_lambda: str | float = "ebic"

    def __post_init__(self):
        kappas = tuple(float(k) for k in self.kappa_grid)
        object.__setattr__(self, "kappa_grid", kappas)
        object.__setattr__(self, "penalty_kind", PenaltyKind(self.penalty_kind))
        if not kappas or any(k <= 0 for k in kappas):
            raise ValueError("kappa grid must be nonempty and positive")
        if any(b <= a for a, b in zip(kappas, kappas[1:])):
            raise ValueError("kappa grid must be strictly ascending")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if self.lambda_grid_size < 1:
            raise ValueError("lambda_grid_size must be positive")
        if self.m_rule not in ("sqrt-n", "sqrt-nstar"):
            raise ValueError("m_rule must be 'sqrt-n' or 'sqrt-nstar'")
        if self.lambda_grid is not None:
            lams = tuple(sorted((float(v) for v in self.lambda_grid), reverse=True))
            if not lams or lams[-1] < 0:
                raise ValueError("explicit lambda grid must be nonempty and nonnegative")
            object.__setattr__(self, "lambda_grid", lams)
        if isinstance(self.final_lambda, str):
            if self.final_lambda not in FINAL_LAMBDA_RULES:
                raise ValueError("final_lambda must be 'ebic', 'bic', 'splitting' or a number")
        elif not self.final_lambda >= 0:
            raise ValueError("a fixed final_lambda must be nonnegative")
        PenaltySpec(self.penalty_kind, 0.0, self.gamma)

    def spec(self, lam: float = 0.0) -> PenaltySpec:
        return PenaltySpec(self.penalty_kind, lam, self.gamma)

    def m_for(self, kappa: float, data: SurvivalDataset) -> int:
        size = data.n if self.m_rule == "sqrt-n" else data.n_events
        return int(math.floor(kappa * math.sqrt(size)))

    def replace(self, **changes) -> "TuningConfig":
        return replace(self, **changes)


def pooled_rss(data: SurvivalDataset, a_hat: Sequence[float]) -> float:
    """``sum_j (#I_j / n) * min_beta sum_{I_j} w (y - x'beta)^2`` over the induced subgroups."""
    sets = subgroup_index_sets(data, a_hat)
    total = 0.0
    for idx in sets:
        try:
            fit = stute_wls(data, idx)
        except (SingularDesignError, InsufficientEventsError) as exc:
            raise InvalidThresholdsError(f"subgroup of size {idx.size} cannot be fitted: {exc}") from exc
        total += idx.size / data.n * fit.weighted_rss
    return total


def bic_from_rss(rss: float, n: int, n_params: int, scale: float) -> float:
    return n * math.log(max(rss, RSS_FLOOR * scale)) + n_params * math.log(n)


def _rss_scale(data: SurvivalDataset) -> float:
    return max(float(np.mean(data.y**2)), np.finfo(float).tiny)


def bic_for_thresholds(data: SurvivalDataset, a_hat: Sequence[float], p: int | None = None) -> float:
    """``n log(pooled weighted RSS) + p (s + 1) log n`` for the thresholds ``a_hat``."""
    p = data.p if p is None else p
    rss = pooled_rss(data, a_hat)
    return bic_from_rss(rss, data.n, p * (len(a_hat) + 1), _rss_scale(data))


class _BicCache:
    """Memoises BIC values by threshold tuple for one dataset."""

    def __init__(self, data: SurvivalDataset):
        self.data = data
        self._values: dict[tuple[float, ...], float] = {}

    def __call__(self, a_hat: tuple[float, ...]) -> float:
        if a_hat not in self._values:
            try:
                self._values[a_hat] = bic_for_thresholds(self.data, a_hat)
            except InvalidThresholdsError:
                self._values[a_hat] = math.inf
        return self._values[a_hat]


@dataclass(frozen=True)
class PathPoint:
    """One lambda of a path; ``solved`` is False where the null model is known without solving."""

    lam: float
    candidates: tuple[int, ...]
    a_hat: tuple[float, ...]
    bic: float
    converged: bool
    solved: bool = True


@dataclass(frozen=True, eq=False)
class LambdaSelection:
    best_lambda: float
    solution: GroupSolution
    a_hat: tuple[float, ...]
    bic: float
    path: tuple[PathPoint, ...]


def _refiner(data: SurvivalDataset, seg: Segmentation, min_events: int | None):
    cache: dict[int, float | None] = {}

    def refine(k: int) -> float | None:
        if k not in cache:
            try:
                cache[k] = refine_threshold(data, candidate_window(data, seg, k, min_events))[0]
            except DegenerateWindowError:
                cache[k] = None
        return cache[k]

    return refine


def select_lambda(data: SurvivalDataset, seg: Segmentation, spec: PenaltySpec,
                  lambdas: Sequence[float] | None = None, *, grid_size: int = 50,
                  min_ratio: float = 0.01, tol: float = 1e-6, max_iter: int = 1000,
                  min_events: int | None = None, bic_cache: _BicCache | None = None,
                  problem: BlockProblem | None = None) -> LambdaSelection:
    """Pick the lambda whose refined thresholds minimise BIC (ties go to the larger lambda).

    ``spec`` supplies the penalty family and gamma; its lambda is ignored.
    When ``lambdas`` is omitted a log-spaced grid below ``lambda_max`` is used.
    """
    if problem is None:
        design = build_group_design(data, seg)
        problem = BlockProblem(design.y, design.X, data.p, starts=design.starts, n_free=1)
    if lambdas is None:
        lambdas = lambda_grid(problem.lambda_max(), grid_size, min_ratio)
    lambdas = sorted((float(v) for v in lambdas), reverse=True)
    if not lambdas:
        raise ValueError("lambda grid is empty")
    bic_cache = bic_cache or _BicCache(data)
    refine = _refiner(data, seg, min_events)

    if min_events is None:
        min_events = min_side_events(data.p)
    if 2 * seg.m < 2 * min_events:
        # every window holds 2m events, so no split point can ever be admissible
        # and each lambda yields the null model; the largest lambda wins the tie
        null_bic = bic_cache(())
        skipped = [PathPoint(lam, (), (), null_bic, True, solved=False) for lam in lambdas[1:]]
        lambdas = lambdas[:1]
    else:
        skipped = []

    sols = solve_path(problem, spec, lambdas, tol, max_iter)
    points = []
    best = None
    for sol in sols:
        refined = (refine(k) for k in sol.candidates)
        a_hat = tuple(sorted(a for a in refined if a is not None))
        bic = bic_cache(a_hat)
        points.append(PathPoint(sol.lam, sol.candidates, a_hat, bic, sol.converged))
        if best is None or bic < best[0]:
            best = (bic, sol, a_hat)
    bic, sol, a_hat = best
    if not math.isfinite(bic):
        sol, a_hat, bic = sols[0], (), bic_cache(())
    return LambdaSelection(sol.lam, sol, a_hat, bic, tuple(points + skipped))


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    m: int
    lam: float
    a_hat: tuple[float, ...]
    bic: float
    path: tuple[PathPoint, ...]


@dataclass(frozen=True, eq=False)
class ThresholdFit:
    """Outcome of the two-stage estimator."""

    s_hat: int
    a_hat: tuple[float, ...]
    theta_star: NDArray[np.float64]
    beta_by_group: NDArray[np.float64]
    bic: float
    m_used: int
    lambda_used: float
    kappa_used: float
    final_lambda: float
    penalty: PenaltyKind
    gamma: float
    converged: bool
    scan: tuple[KappaResult, ...] = field(default=())


def _final_lambda(data: SurvivalDataset, a_hat: Sequence[float], cfg: TuningConfig,
                  split_lambda: float) -> tuple[float, "FinalFit"]:
    problem = segmented_problem(data, a_hat)
    theta0 = np.linalg.lstsq(problem.X, problem.y, rcond=None)[0]
    if cfg.final_lambda == "splitting":
        lams = [split_lambda]
    elif cfg.final_lambda in ("bic", "ebic"):
        lam_max = max(problem.lambda_max(), float(np.max(np.abs(theta0))) / cfg.gamma)
        lams = list(lambda_grid(lam_max, cfg.lambda_grid_size, cfg.lambda_min_ratio))
        lams.append(0.0)
    else:
        lams = [float(cfg.final_lambda)]
    scale = _rss_scale(data)
    extra = 2 * EBIC_GAMMA * math.log(problem.X.shape[1]) if cfg.final_lambda == "ebic" else 0.0
    best = None
    for lam in lams:
        fit = final_penalized_fit(data, a_hat, cfg.spec(lam), cfg.tol, cfg.max_iter,
                                  problem=problem, theta0=theta0)
        r = problem.y - problem.X @ fit.theta_star
        df = int(np.count_nonzero(fit.theta_star))
        bic = bic_from_rss(float(r @ r) / data.n, data.n, df, scale) + df * extra
        if best is None or bic < best[0]:
            best = (bic, lam, fit)
    return best[1], best[2]


def tsmcd(data: SurvivalDataset, cfg: TuningConfig | None = None) -> ThresholdFit:
    """Detect thresholds and fit sparse per-subgroup coefficients.

    Raises ``InfeasibleConfigError`` when no kappa value yields a valid
    segmentation of the data.
    """
    cfg = cfg or TuningConfig()
    bic_cache = _BicCache(data)
    spec = cfg.spec()
    results: list[tuple[KappaResult, LambdaSelection]] = []
    for kappa in cfg.kappa_grid:
        m = cfg.m_for(kappa, data)
        try:
            seg = build_segments(data, m) if m >= 1 else None
        except (InsufficientEventsError, InvalidSubsetError):
            seg = None
        if seg is None:
            log.debug("kappa=%g gives infeasible m=%d", kappa, m)
            continue
        try:
            sel = select_lambda(data, seg, spec, cfg.lambda_grid, grid_size=cfg.lambda_grid_size,
                                min_ratio=cfg.lambda_min_ratio, tol=cfg.tol, max_iter=cfg.max_iter,
                                min_events=cfg.min_side_events, bic_cache=bic_cache)
        except SingularDesignError as exc:
            log.debug("kappa=%g skipped: %s", kappa, exc)
            continue
        results.append((KappaResult(kappa, m, sel.best_lambda, sel.a_hat, sel.bic, sel.path), sel))
    if not results:
        raise InfeasibleConfigError("no kappa value gives a feasible segmentation")
    best_kr, best_sel = min(results, key=lambda r: r[0].bic)
    a_hat = best_kr.a_hat
    try:
        lam_final, final = _final_lambda(data, a_hat, cfg, best_kr.lam)
    except InvalidThresholdsError:
        raise
    except ThresholdAFTError as exc:
        raise InvalidThresholdsError(f"final fit failed at thresholds {a_hat}: {exc}") from exc
    return ThresholdFit(
        s_hat=len(a_hat),
        a_hat=a_hat,
        theta_star=final.theta_star,
        beta_by_group=final.beta_by_group,
        bic=best_kr.bic,
        m_used=best_kr.m,
        lambda_used=best_kr.lam,
        kappa_used=best_kr.kappa,
        final_lambda=lam_final,
        penalty=cfg.penalty_kind,
        gamma=cfg.gamma,
        converged=bool(final.converged and best_sel.solution.converged),
        scan=tuple(r[0] for r in results),
    )
