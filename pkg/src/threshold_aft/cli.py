"""Command-line interface: ``threshold-aft {fit,simulate,bootstrap,bic-scan,km-curves}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Settings are resolved as command-line flag, then
``--config`` JSON key, then built-in default.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .censored import partition_by_thresholds
from .exceptions import DataFormatError, ThresholdAFTError
from .io import (FitRecord, dump_json, file_digest, fit_record, ingest, km_curve, km_rows,
                 load_config, write_table)
from .selection import TuningConfig, tsmcd
from .simulation import SimDesign, bootstrap_se, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# flag name -> TuningConfig field
_CFG_KEYS = {
    "penalty": "penalty_kind",
    "gamma": "gamma",
    "kappa_grid": "kappa_grid",
    "lambda_grid": "lambda_grid",
    "seed": "seed",
    "m_rule": "m_rule",
    "final_lambda": "final_lambda",
    "tol": "tol",
    "max_iter": "max_iter",
    "lambda_grid_size": "lambda_grid_size",
    "lambda_min_ratio": "lambda_min_ratio",
}


def _add_tuning(p: argparse.ArgumentParser) -> None:
    p.add_argument("--penalty", choices=["mcp", "scad"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--kappa-grid", type=_float_list, help="comma-separated kappa values")
    p.add_argument("--lambda-grid", type=_float_list, help="comma-separated lambda values")
    p.add_argument("--m-rule", choices=["sqrt-n", "sqrt-nstar"])
    p.add_argument("--final-lambda", help="'ebic', 'bic', 'splitting' or a number")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="JSON file of default settings")


def _add_data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", type=Path, required=required, help="delimited dataset file")
    p.add_argument("--z", help="name or zero-based index of the threshold column")
    p.add_argument("--intercept", action="store_true", default=None,
                   help="prepend an intercept column")
    p.add_argument("--delimiter", help="field separator (default: detect comma or tab)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="threshold-aft", description="Multi-threshold AFT regression.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="detect thresholds and write a fit record")
    _add_data(p)
    _add_tuning(p)
    p.add_argument("--bootstrap-b", type=int, help="also attach bootstrap SE with this many resamples")
    p.add_argument("--out", type=Path, help="fit record path (default: stdout)")
    p.add_argument("--table", type=Path, help="also write the coefficient table here")

    p = sub.add_parser("simulate", help="Monte Carlo replications of a simulation design")
    p.add_argument("--example", choices=["ex1", "ex2", "ex3", "null"])
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int)
    _add_tuning(p)
    p.add_argument("--out", type=Path, help="report path (default: stdout)")
    p.add_argument("--records", type=Path, help="per-replication table path")

    p = sub.add_parser("bootstrap", help="attach bootstrap SE, CI and p-values to a fit record")
    _add_data(p)
    p.add_argument("--fit", type=Path, required=True, help="fit record from 'fit'")
    p.add_argument("--bootstrap-b", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--table", type=Path)

    p = sub.add_parser("bic-scan", help="emit the (kappa, lambda, BIC) surface")
    _add_data(p)
    _add_tuning(p)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("km-curves", help="Kaplan-Meier step data of the fitted subgroups")
    _add_data(p)
    p.add_argument("--fit", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    return parser


def _settings(args: argparse.Namespace) -> dict:
    """Merge flags over config-file keys; unset flags fall through."""
    merged = load_config(args.config) if getattr(args, "config", None) else {}
    merged = {k.replace("-", "_"): v for k, v in merged.items()}
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "verbose"):
            merged[k] = v
    return merged


def _tuning(s: dict) -> TuningConfig:
    kw = {}
    for key, field_name in _CFG_KEYS.items():
        if key in s:
            kw[field_name] = s[key]
    fl = kw.get("final_lambda")
    if isinstance(fl, str) and fl not in ("ebic", "bic", "splitting"):
        try:
            kw["final_lambda"] = float(fl)
        except ValueError:
            raise UsageError(f"invalid --final-lambda {fl!r}") from None
    try:
        return TuningConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _load_data(s: dict):
    if s.get("z") is None:
        raise UsageError("--z is required")
    path = Path(s["data"])
    if not path.is_file():
        raise DataFormatError(f"{path}: no such file")
    data = ingest(path, s["z"], bool(s.get("intercept", False)), s.get("delimiter"))
    return data, file_digest(path)


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _write_table(record: FitRecord, path) -> None:
    header, rows = record.table_rows()
    write_table(path, header, rows)


def cmd_fit(s: dict) -> None:
    data, digest = _load_data(s)
    cfg = _tuning(s)
    fit = tsmcd(data, cfg)
    config = {"z": s["z"], "intercept": bool(s.get("intercept", False)),
              "penalty": cfg.penalty_kind.value, "gamma": cfg.gamma, "m_rule": cfg.m_rule,
              "kappa_grid": list(cfg.kappa_grid), "final_lambda": cfg.final_lambda, "seed": cfg.seed}
    record = fit_record(fit, data, digest, config)
    B = s.get("bootstrap_b")
    if B:
        res = bootstrap_se(data, fit.a_hat, int(B), cfg.seed, cfg.spec(fit.final_lambda), cfg.tol, cfg.max_iter)
        record = record.with_bootstrap(res, int(B), cfg.seed)
    _emit(record.to_json(), s.get("out"))
    if s.get("table"):
        _write_table(record, s["table"])


def _report_document(report, cfg: TuningConfig) -> dict:
    d = report.design
    return {
        "version": __version__,
        "design": {"example": d.example_id.value, "n": d.n, "seed": d.seed,
                   "theta_true": list(d.theta_true), "thresholds_true": list(d.thresholds_true),
                   "error_sd": d.error_sd, "censor_sd": d.censor_sd},
        "penalty": cfg.penalty_kind.value,
        "gamma": cfg.gamma,
        "reps": report.reps,
        "n_failed": report.n_failed,
        "flagged": report.flagged,
        "s_hat_frequency": {str(k): v for k, v in report.s_hat_frequency.items()},
        "threshold_bias": list(report.threshold_bias),
        "threshold_mse": list(report.threshold_mse),
        "zero_rate": list(report.zero_rate),
        "censor_rate_mean": report.censor_rate_mean,
        "histograms": report.histograms() if report.coefficient_draws.shape[0] and d.s_true else [],
        "boxplots": report.boxplot_stats() if report.coefficient_draws.shape[0] else [],
    }


def cmd_simulate(s: dict) -> None:
    cfg = _tuning(s)
    reps = int(s.get("reps", 200))
    if reps < 1:
        raise UsageError("--reps must be positive")
    try:
        design = SimDesign(s.get("example", "ex2"), n=s.get("n"), seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_monte_carlo(design, reps, cfg, n_jobs=int(s.get("jobs", 1)))
    _emit(dump_json(_report_document(report, cfg)), s.get("out"))
    rec_path = s.get("records")
    if rec_path is None and s.get("out") is not None:
        out = Path(s["out"])
        rec_path = out.with_name(out.stem + "_records.csv")
    if rec_path is not None:
        k = len(design.theta_true)
        header = ["rep", "s_hat", "a_hat", "bic", "kappa", "lambda", "censor_rate", "error"]
        header += [f"theta{j + 1}" for j in range(k)]
        rows = []
        for r in report.records:
            theta = list(r.theta_star) if len(r.theta_star) == k else [""] * k
            rows.append([r.rep, "" if r.s_hat is None else r.s_hat, ";".join(repr(a) for a in r.a_hat),
                         "" if r.bic is None else r.bic, "" if r.kappa is None else r.kappa,
                         "" if r.lam is None else r.lam, r.censor_rate, r.error or ""] + theta)
        write_table(rec_path, header, rows)


def cmd_bootstrap(s: dict) -> None:
    record = FitRecord.load(s["fit"])
    s.setdefault("z", record.config.get("z"))
    s.setdefault("intercept", record.config.get("intercept", False))
    data, digest = _load_data(s)
    if record.input_digest and digest != record.input_digest:
        log.warning("data file digest differs from the one stored in the fit record")
    if list(data.names) != record.names:
        raise DataFormatError("data columns do not match the fit record")
    B = int(s.get("bootstrap_b", 200))
    seed = int(s.get("seed", record.config.get("seed", 0)))
    cfg = TuningConfig(penalty_kind=record.penalty, gamma=record.gamma)
    res = bootstrap_se(data, record.a_hat, B, seed, cfg.spec(record.final_lambda), cfg.tol, cfg.max_iter)
    record = record.with_bootstrap(res, B, seed)
    _emit(record.to_json(), s.get("out"))
    if s.get("table"):
        _write_table(record, s["table"])


def cmd_bic_scan(s: dict) -> None:
    data, _ = _load_data(s)
    fit = tsmcd(data, _tuning(s))
    rows = []
    for kr in fit.scan:
        for pt in kr.path:
            rows.append([kr.kappa, kr.m, pt.lam, pt.bic, len(pt.a_hat),
                         ";".join(repr(a) for a in pt.a_hat), int(pt.solved)])
    text = write_table(None, ["kappa", "m", "lambda", "bic", "s_hat", "a_hat", "solved"], rows)
    _emit(text, s.get("out"))


def cmd_km_curves(s: dict) -> None:
    record = FitRecord.load(s["fit"])
    s.setdefault("z", record.config.get("z"))
    s.setdefault("intercept", record.config.get("intercept", False))
    data, _ = _load_data(s)
    labels = partition_by_thresholds(data.z, np.asarray(record.a_hat, dtype=float))
    curves = km_curve(data, labels + 1, labels=range(1, record.s_hat + 2))
    _emit(write_table(None, ["group", "kind", "time", "survival"], km_rows(curves)), s.get("out"))


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
    "bic-scan": cmd_bic_scan,
    "km-curves": cmd_km_curves,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](_settings(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ThresholdAFTError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
