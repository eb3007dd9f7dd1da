"""Dataset files, fit records and plot-ready emissions.

Dataset files are delimited text with a header row.  ``y`` and ``delta`` are
required; every other column is a numeric regressor.  Structured results are
written as sorted-key JSON so that a record serialises to the same bytes
after a parse round trip.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .censored import SurvivalDataset
from .exceptions import DataFormatError

log = logging.getLogger(__name__)

DELIMITERS = ",\t"
INTERCEPT_NAME = "intercept"


def file_digest(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def detect_delimiter(text: str) -> str:
    """Comma or tab, whichever the header line uses; comma when neither is found."""
    header = text.splitlines()[0] if text else ""
    try:
        return csv.Sniffer().sniff(header, delimiters=DELIMITERS).delimiter
    except csv.Error:
        return "\t" if "\t" in header else ","


def _parse_float(token: str, column: str, line: int) -> float:
    token = token.strip()
    if token == "":
        raise DataFormatError(f"line {line}: missing value in column {column!r}")
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"line {line}: column {column!r} is not numeric: {token!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"line {line}: column {column!r} is not finite: {token!r}")
    return value


def _resolve_z(header: list[str], z_column: str | int) -> int:
    if isinstance(z_column, str) and z_column in header:
        return header.index(z_column)
    try:
        k = int(z_column)
    except (TypeError, ValueError):
        raise DataFormatError(f"z column {z_column!r} not found in header {header}") from None
    if not 0 <= k < len(header):
        raise DataFormatError(f"z column index {k} outside 0..{len(header) - 1}")
    return k


def ingest(path: str | Path, z_column: str | int, intercept: bool = False,
           delimiter: str | None = None, z_in_X: bool = True) -> SurvivalDataset:
    """Read a delimited dataset file.

    Parameters
    ----------
    path : path-like
        File with a header row containing ``y`` and ``delta``.
    z_column : str or int
        Header name, or zero-based column position, of the threshold variable.
    intercept : bool
        Prepend a column of ones named ``intercept`` to the regressors.
    delimiter : str, optional
        Field separator; detected among comma and tab when omitted.
    z_in_X : bool
        Keep the threshold variable among the regressors (default).

    Raises
    ------
    DataFormatError
        On a malformed header or row (the message cites the line number), an
        event indicator outside {0, 1}, or a file without any event.
    """
    text = Path(path).read_text()
    if not text.strip():
        raise DataFormatError(f"{path}: file is empty")
    delimiter = delimiter or detect_delimiter(text)
    reader = csv.reader(_io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    if len(set(header)) != len(header):
        raise DataFormatError("line 1: duplicate column names in header")
    for required in ("y", "delta"):
        if required not in header:
            raise DataFormatError(f"line 1: required column {required!r} missing")
    iy, idelta = header.index("y"), header.index("delta")
    iz = _resolve_z(header, z_column)
    if iz in (iy, idelta):
        raise DataFormatError("z column must differ from y and delta")
    reg = [j for j in range(len(header)) if j not in (iy, idelta) and (z_in_X or j != iz)]

    rows = []
    for fields in reader:
        line = reader.line_num
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise DataFormatError(f"line {line}: expected {len(header)} fields, found {len(fields)}")
        values = [_parse_float(fields[j], header[j], line) for j in range(len(header))]
        if values[idelta] not in (0.0, 1.0):
            raise DataFormatError(f"line {line}: delta must be 0 or 1, found {fields[idelta].strip()!r}")
        rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.array(rows)
    delta = table[:, idelta].astype(np.int8)
    if delta.sum() == 0:
        raise DataFormatError(f"{path}: every observation is censored")
    X = table[:, reg]
    names = [header[j] for j in reg]
    if intercept:
        X = np.column_stack([np.ones(len(rows)), X])
        names = [INTERCEPT_NAME] + names
    if X.shape[1] == 0:
        raise DataFormatError("no regressor columns")
    return SurvivalDataset(table[:, iy], delta, X, table[:, iz], tuple(names))


def write_dataset(data: SurvivalDataset, path: str | Path, delimiter: str = ",") -> str:
    """Write ``data`` in the format read by :func:`ingest`.

    A leading all-ones column named ``intercept`` is dropped (re-add it with
    ``intercept=True``).  The threshold variable is written under its own
    name only when it is not already one of the regressors.  Returns the
    name to pass as ``z_column`` when reading the file back.
    """
    names = list(data.names)
    X = np.asarray(data.X)
    if names and names[0] == INTERCEPT_NAME and np.all(X[:, 0] == 1.0):
        names, X = names[1:], X[:, 1:]
    z_name = next((nm for nm, col in zip(names, X.T) if np.array_equal(col, data.z)), None)
    columns = [("y", data.y), ("delta", data.delta)] + list(zip(names, X.T))
    if z_name is None:
        z_name = "z"
        while z_name in names:
            z_name += "_"
        columns.append((z_name, data.z))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([c for c, _ in columns])
        for i in range(data.n):
            w.writerow([str(int(col[i])) if c == "delta" else repr(float(col[i])) for c, col in columns])
    return z_name


def write_table(path: str | Path | None, header: Sequence[str], rows: Iterable[Sequence[Any]],
                delimiter: str = ",") -> str:
    """Emit a delimited table with a header; returns the text and writes it when ``path`` is set."""
    buf = _io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- fit records


@dataclass(frozen=True)
class FitRecord:
    """Self-describing result of one fit.

    ``coefficients`` holds one row per (subgroup, regressor) with the
    subgroup coefficient and, after :meth:`with_bootstrap`, its standard
    error, percentile interval and Wald p-value.
    """

    version: str
    input_digest: str
    names: list[str]
    n: int
    n_events: int
    penalty: str
    gamma: float
    s_hat: int
    a_hat: list[float]
    theta_star: list[float]
    bic: float
    m_used: int
    kappa_used: float
    lambda_used: float
    final_lambda: float
    converged: bool
    coefficients: list[dict]
    tuning: list[dict] = field(default_factory=list)
    bootstrap: dict | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return dump_json(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "FitRecord":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "FitRecord":
        try:
            return cls.from_json(Path(path).read_text())
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataFormatError(f"{path}: not a fit record: {exc}") from exc

    def with_bootstrap(self, result, B: int, seed: int) -> "FitRecord":
        """Attach per-subgroup bootstrap SE, interval and p-value columns."""
        rows = []
        for k, row in enumerate(self.coefficients):
            rows.append(dict(row, se=float(result.group_se[k]), ci_low=float(result.group_ci_low[k]),
                             ci_high=float(result.group_ci_high[k]), p_value=float(result.group_wald_p[k])))
        meta = {"B": int(B), "seed": int(seed), "n_used": int(result.n_used),
                "n_skipped": int(result.n_skipped)}
        return replace(self, coefficients=rows, bootstrap=meta)

    def table_rows(self) -> tuple[list[str], list[list]]:
        """Wide coefficient table: one row per regressor, estimate/SE/p per subgroup."""
        groups = self.s_hat + 1
        header = ["variable"]
        for g in range(1, groups + 1):
            header += [f"group{g}_coef", f"group{g}_se", f"group{g}_p"]
        body = []
        for j, name in enumerate(self.names):
            row: list = [name]
            for g in range(groups):
                c = self.coefficients[g * len(self.names) + j]
                row += [c["estimate"], c.get("se"), c.get("p_value")]
            body.append(["" if v is None else v for v in row])
        return header, body


def fit_record(fit, data: SurvivalDataset, input_digest: str = "", config: dict | None = None) -> FitRecord:
    """Build a :class:`FitRecord` from a ``ThresholdFit``."""
    from . import __version__

    coef = []
    for g, beta in enumerate(np.asarray(fit.beta_by_group)):
        for name, b in zip(data.names, beta):
            coef.append({"subgroup": g + 1, "variable": name, "estimate": float(b),
                         "se": None, "ci_low": None, "ci_high": None, "p_value": None})
    tuning = []
    for kr in fit.scan:
        tuning.append({"kappa": kr.kappa, "m": kr.m, "lambda": kr.lam, "bic": kr.bic,
                       "a_hat": list(kr.a_hat)})
    return FitRecord(
        version=__version__,
        input_digest=input_digest,
        names=list(data.names),
        n=data.n,
        n_events=data.n_events,
        penalty=fit.penalty.value,
        gamma=float(fit.gamma),
        s_hat=int(fit.s_hat),
        a_hat=[float(a) for a in fit.a_hat],
        theta_star=[float(t) for t in fit.theta_star],
        bic=float(fit.bic),
        m_used=int(fit.m_used),
        kappa_used=float(fit.kappa_used),
        lambda_used=float(fit.lambda_used),
        final_lambda=float(fit.final_lambda),
        converged=bool(fit.converged),
        coefficients=coef,
        tuning=tuning,
        config=dict(config or {}),
    )


# ----------------------------------------------------------- survival curves


@dataclass(frozen=True, eq=False)
class KMCurve:
    """Product-limit survival curve of one group on the response scale.

    ``time``/``survival`` are right-continuous step points starting at
    ``(min y, 1)``; ``censor_time``/``censor_survival`` mark censored
    observations at the height of the curve.
    """

    time: NDArray[np.float64]
    survival: NDArray[np.float64]
    censor_time: NDArray[np.float64]
    censor_survival: NDArray[np.float64]


def _product_limit(y: NDArray, d: NDArray) -> KMCurve:
    times = np.unique(y[d == 1])
    at_risk = (y[None, :] >= times[:, None]).sum(axis=1)
    deaths = ((y[None, :] == times[:, None]) & (d[None, :] == 1)).sum(axis=1)
    surv = np.cumprod(1.0 - deaths / at_risk)
    cens = np.sort(y[d == 0])
    # height at a censoring time: the curve value at or just before it
    k = np.searchsorted(times, cens, side="right")
    cens_s = np.concatenate([[1.0], surv])[k]
    start = float(y.min())
    return KMCurve(np.concatenate([[start], times]), np.concatenate([[1.0], surv]), cens, cens_s)


def km_curve(data: SurvivalDataset, groups: ArrayLike,
             labels: Sequence[int] | None = None) -> dict[int, KMCurve]:
    """Kaplan-Meier curve of each group, keyed by label.

    ``groups`` holds one label per observation; ``partition_by_thresholds``
    gives the labels of the subgroups induced by fitted thresholds.
    ``labels`` lists the expected groups (default: those present); an
    expected group without observations is omitted with a warning.
    """
    g = np.asarray(groups)
    if g.shape != (data.n,):
        raise ValueError(f"groups must hold one label per observation ({data.n})")
    labels = np.unique(g).tolist() if labels is None else list(labels)
    out = {}
    for lab in labels:
        mask = g == lab
        if not mask.any():
            log.warning("group %s is empty and is omitted", lab)
            continue
        out[int(lab)] = _product_limit(np.asarray(data.y)[mask], np.asarray(data.delta)[mask])
    return out


def km_rows(curves: dict[int, KMCurve]) -> list[list]:
    """Long-format rows ``(group, kind, time, survival)`` for delimited output."""
    rows = []
    for lab, c in curves.items():
        rows += [[lab, "step", float(t), float(s)] for t, s in zip(c.time, c.survival)]
        rows += [[lab, "censor", float(t), float(s)] for t, s in zip(c.censor_time, c.censor_survival)]
    return rows


# ------------------------------------------------------------ configuration


def load_config(path: str | Path) -> dict:
    """Read a JSON configuration file into a flat dictionary."""
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DataFormatError(f"{path}: configuration must be a JSON object")
    return cfg
