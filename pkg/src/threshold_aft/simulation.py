"""Simulation designs, Monte Carlo replication and bootstrap standard errors."""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .censored import SurvivalDataset
from .exceptions import InvalidThresholdsError, ThresholdAFTError
from .penalty import PenaltySpec
from .refining import final_penalized_fit, subgroup_coefficients, subgroup_index_sets
from .selection import ThresholdFit, TuningConfig, tsmcd

log = logging.getLogger(__name__)

THETA_TRUE = (2.0, 1.0, 1.0, 1.0, 1.0, 1.0,
              -1.0, 0.0, 0.0, -1.0, -1.0, -1.0,
              0.0, -1.0, 1.0, 0.0, 0.0, 0.0)
THRESHOLDS_TRUE = (-0.5244, 0.2533)
ERROR_SD = math.sqrt(0.5)
CENSOR_SD = 4.0
CENSOR_MEAN = 2.0
P = 6


class Example(str, enum.Enum):
    EX1 = "ex1"
    EX2 = "ex2"
    EX3 = "ex3"
    NULL = "null"


@dataclass(frozen=True)
class SimDesign:
    """One of the simulation designs.

    ``ex1``: n = 150, censoring N(2, 16).  ``ex2``: n = 300, same censoring.
    ``ex3``: n = 300, censoring mean equal to ``x2 + ... + x6``.  ``null``
    keeps the ``ex2`` setting but sets every increment to zero.
    """

    example_id: Example = Example.EX2
    n: int | None = None
    theta_true: tuple[float, ...] = THETA_TRUE
    thresholds_true: tuple[float, ...] = THRESHOLDS_TRUE
    error_sd: float = ERROR_SD
    censor_sd: float = CENSOR_SD
    seed: int = 0

    def __post_init__(self):
        ex = Example(self.example_id)
        object.__setattr__(self, "example_id", ex)
        if self.n is None:
            object.__setattr__(self, "n", 150 if ex is Example.EX1 else 300)
        if ex is Example.NULL and self.theta_true == THETA_TRUE:
            object.__setattr__(self, "theta_true", THETA_TRUE[:P] + (0.0,) * (2 * P))
        if len(self.theta_true) != P * (len(self.thresholds_true) + 1):
            raise ValueError("theta_true must hold p coefficients per subgroup")

    @property
    def s_true(self) -> int:
        increments = np.asarray(self.theta_true).reshape(-1, P)[1:]
        return int(np.count_nonzero(np.any(increments != 0, axis=1)))

    def with_seed(self, seed: int) -> "SimDesign":
        return SimDesign(self.example_id, self.n, self.theta_true, self.thresholds_true,
                         self.error_sd, self.censor_sd, seed)


def generate(design: SimDesign, rng: np.random.Generator | None = None) -> SurvivalDataset:
    """Draw one dataset; fully determined by ``design.seed`` when ``rng`` is omitted."""
    rng = np.random.default_rng(design.seed) if rng is None else rng
    n = design.n
    X = np.column_stack([np.ones(n), rng.standard_normal((n, P - 1))])
    z = X[:, 1]
    beta = subgroup_coefficients(np.asarray(design.theta_true), P)
    group = np.searchsorted(np.asarray(design.thresholds_true), z, side="left")
    t = np.einsum("ij,ij->i", X, beta[group]) + design.error_sd * rng.standard_normal(n)
    if design.example_id is Example.EX3:
        c_mean = X[:, 1:].sum(axis=1)
    else:
        c_mean = np.full(n, CENSOR_MEAN)
    c = c_mean + design.censor_sd * rng.standard_normal(n)
    delta = (t <= c).astype(np.int8)
    if delta.sum() == 0:
        delta[np.argmin(t - c)] = 1
    return SurvivalDataset(np.minimum(t, c), delta, X, z,
                           names=("intercept",) + tuple(f"x{j}" for j in range(2, P + 1)))


def replication_seeds(seed: int, reps: int) -> list[np.random.SeedSequence]:
    """Independent child streams, one per replication."""
    return np.random.SeedSequence(seed).spawn(reps)


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    s_hat: int | None
    a_hat: tuple[float, ...]
    theta_star: tuple[float, ...]
    bic: float | None
    censor_rate: float
    kappa: float | None = None
    lam: float | None = None
    error: str | None = None


def _run_one(args) -> ReplicationRecord:
    design, cfg, rep, ss = args
    data = generate(design, np.random.default_rng(ss))
    censor = 1.0 - data.n_events / data.n
    try:
        fit = tsmcd(data, cfg)
    except ThresholdAFTError as exc:
        return ReplicationRecord(rep, None, (), (), None, censor, error=f"{type(exc).__name__}: {exc}")
    return ReplicationRecord(rep, fit.s_hat, fit.a_hat, tuple(fit.theta_star.tolist()), fit.bic,
                             censor, fit.kappa_used, fit.final_lambda)


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Aggregates over Monte Carlo replications.

    Threshold and coefficient summaries use only replications whose
    estimated threshold count equals the true one.
    """

    design: SimDesign
    reps: int
    records: tuple[ReplicationRecord, ...]
    s_hat_frequency: dict[int, int]
    n_failed: int
    flagged: bool
    threshold_bias: tuple[float, ...]
    threshold_mse: tuple[float, ...]
    zero_rate: tuple[float, ...]
    censor_rate_mean: float
    coefficient_draws: NDArray[np.float64] = field(repr=False)

    def frequency(self, s: int) -> float:
        """Share of successful replications with ``s_hat == s``."""
        ok = self.reps - self.n_failed
        return self.s_hat_frequency.get(s, 0) / ok if ok else float("nan")

    def threshold_draws(self) -> NDArray[np.float64]:
        s = self.design.s_true
        return np.array([r.a_hat for r in self.records if r.s_hat == s]).reshape(-1, s)

    def histograms(self, bins: int = 30) -> list[dict]:
        """Histogram counts and edges of each estimated threshold."""
        draws = self.threshold_draws()
        out = []
        for j in range(draws.shape[1]):
            counts, edges = np.histogram(draws[:, j], bins=bins)
            out.append({"threshold": j + 1, "counts": counts.tolist(), "edges": edges.tolist()})
        return out

    def boxplot_stats(self) -> list[dict]:
        """Quartiles and whisker ends of each coefficient over correct-count replications."""
        out = []
        for j, col in enumerate(self.coefficient_draws.T):
            q1, med, q3 = np.percentile(col, [25, 50, 75])
            iqr = q3 - q1
            lo = col[col >= q1 - 1.5 * iqr].min()
            hi = col[col <= q3 + 1.5 * iqr].max()
            out.append({"coefficient": j + 1, "true": self.design.theta_true[j], "q1": q1,
                        "median": med, "q3": q3, "whisker_low": lo, "whisker_high": hi})
        return out


def summarize(design: SimDesign, records: Sequence[ReplicationRecord]) -> SimulationReport:
    records = tuple(sorted(records, key=lambda r: r.rep))
    ok = [r for r in records if r.error is None]
    freq: dict[int, int] = {}
    for r in ok:
        freq[r.s_hat] = freq.get(r.s_hat, 0) + 1
    s = design.s_true
    correct = [r for r in ok if r.s_hat == s]
    k = P * (s + 1)
    if correct and s > 0:
        a = np.array([r.a_hat for r in correct])
        err = a - np.asarray(design.thresholds_true)
        bias = tuple(err.mean(axis=0).tolist())
        mse = tuple((err**2).mean(axis=0).tolist())
    else:
        bias = mse = tuple([float("nan")] * s)
    draws = np.array([r.theta_star for r in correct]).reshape(-1, k) if correct else np.empty((0, k))
    zero_rate = tuple((draws == 0).mean(axis=0).tolist()) if correct else tuple([float("nan")] * k)
    n_failed = len(records) - len(ok)
    return SimulationReport(
        design=design,
        reps=len(records),
        records=records,
        s_hat_frequency=dict(sorted(freq.items())),
        n_failed=n_failed,
        flagged=n_failed > 0.1 * len(records),
        threshold_bias=bias,
        threshold_mse=mse,
        zero_rate=zero_rate,
        censor_rate_mean=float(np.mean([r.censor_rate for r in records])),
        coefficient_draws=draws,
    )


def run_monte_carlo(design: SimDesign, reps: int, cfg: TuningConfig | None = None,
                    n_jobs: int = 1) -> SimulationReport:
    """Run ``reps`` seeded replications of ``tsmcd`` and aggregate them.

    Replication ``r`` draws its data from the ``r``-th child of
    ``SeedSequence(design.seed)``, so results do not depend on ``n_jobs``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    cfg = cfg or TuningConfig()
    tasks = [(design, cfg, r, ss) for r, ss in enumerate(replication_seeds(design.seed, reps))]
    if n_jobs == 1:
        records = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_run_one, tasks, chunksize=max(1, reps // (4 * n_jobs))))
    report = summarize(design, records)
    if report.flagged:
        log.warning("%d of %d replications failed", report.n_failed, reps)
    return report


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Bootstrap summaries for ``theta_star`` and for the per-subgroup coefficients."""

    estimate: NDArray[np.float64]
    se: NDArray[np.float64]
    ci_low: NDArray[np.float64]
    ci_high: NDArray[np.float64]
    wald_p: NDArray[np.float64]
    group_estimate: NDArray[np.float64]
    group_se: NDArray[np.float64]
    group_ci_low: NDArray[np.float64]
    group_ci_high: NDArray[np.float64]
    group_wald_p: NDArray[np.float64]
    n_used: int
    n_skipped: int


def _wald_p(est: NDArray, se: NDArray) -> NDArray:
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = np.abs(est) / se
    p = 2 * stats.norm.sf(zstat)
    # zero spread: exact zero estimates carry no evidence, nonzero ones are certain
    p = np.where(se > 0, p, np.where(est != 0, 0.0, 1.0))
    return p


def bootstrap_se(data: SurvivalDataset, a_hat: Sequence[float], B: int, seed: int = 0,
                 spec: PenaltySpec | None = None, tol: float = 1e-6, max_iter: int = 1000,
                 level: float = 0.95, resamples: Sequence[NDArray] | None = None) -> BootstrapResult:
    """Nonparametric row bootstrap of the final coefficient fit at fixed thresholds.

    A resample that leaves a subgroup without events is redrawn up to ten
    times and then skipped.  ``resamples`` overrides the random draws with
    explicit index vectors.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    spec = spec or PenaltySpec("mcp", 0.0)
    base = final_penalized_fit(data, a_hat, spec, tol, max_iter)
    rng = np.random.default_rng(seed)
    draws = []
    skipped = 0
    for b in range(B):
        fit = None
        for _ in range(11):
            idx = (np.asarray(resamples[b]) if resamples is not None
                   else rng.integers(0, data.n, data.n))
            try:
                boot = data.take(idx)
                subgroup_index_sets(boot, a_hat)
                fit = final_penalized_fit(boot, a_hat, spec, tol, max_iter)
                break
            except (InvalidThresholdsError, ThresholdAFTError, ValueError):
                if resamples is not None:
                    break
        if fit is None:
            skipped += 1
            continue
        draws.append(fit.theta_star)
    if len(draws) < 2:
        raise InvalidThresholdsError("fewer than two bootstrap resamples could be fitted")
    T = np.array(draws)
    p = data.p
    G = np.cumsum(T.reshape(len(draws), -1, p), axis=1).reshape(len(draws), -1)
    alpha = (1 - level) / 2

    def summary(est, sample):
        se = sample.std(axis=0, ddof=1)
        lo, hi = np.quantile(sample, [alpha, 1 - alpha], axis=0)
        return se, lo, hi, _wald_p(est, se)

    se, lo, hi, pv = summary(base.theta_star, T)
    gest = base.beta_by_group.ravel()
    gse, glo, ghi, gpv = summary(gest, G)
    return BootstrapResult(base.theta_star, se, lo, hi, pv, gest, gse, glo, ghi, gpv,
                           len(draws), skipped)
