"""Text formats: curve matrices, study configs and result records."""

from __future__ import annotations

import io
import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import FunctionalDataset, Grid
from .simulation import StudyConfig

__all__ = [
    "CurveFileError",
    "ConfigError",
    "CurveMatrix",
    "read_curves",
    "parse_curves",
    "write_curves",
    "format_curves",
    "parse_config",
    "read_config",
    "ResultRecord",
    "format_table",
]

MISSING = {"", "NA"}


class CurveFileError(ValueError):
    """Malformed curve matrix, located by 1-based line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Curve matrices
# --------------------------------------------------------------------------


@dataclass
class CurveMatrix:
    """A parsed curve file: the dataset plus its row and column labels."""

    dataset: FunctionalDataset
    row_labels: list[str] | None
    column_labels: list[str]
    dropped: list[str]


def _split(line: str, delim: str | None) -> list[str]:
    cells = line.split(delim) if delim else line.split()
    return [c.strip() for c in cells]


def _sniff(header: str) -> str | None:
    if "\t" in header:
        return "\t"
    if "," in header:
        return ","
    if ";" in header:
        return ";"
    return None


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _locations(labels: list[str], line: int, offset: int) -> np.ndarray:
    if len(set(labels)) != len(labels):
        seen = set()
        for j, lab in enumerate(labels):
            if lab in seen:
                raise CurveFileError(f"duplicate column label {lab!r}", line, j + 1 + offset)
            seen.add(lab)
    if all(re.fullmatch(r"[+-]?\d+", lab) for lab in labels):
        # integer labels (e.g. week numbers): linear map, first -> 0, last -> 1
        idx = np.array([int(lab) for lab in labels])
        for j in range(1, idx.size):
            if idx[j] <= idx[j - 1]:
                raise CurveFileError("integer column labels must increase", line, j + 1 + offset)
        if idx.size == 1:
            return np.zeros(1)
        return (idx - idx[0]) / (idx[-1] - idx[0])
    pts = np.empty(len(labels))
    for j, lab in enumerate(labels):
        try:
            pts[j] = float(lab)
        except ValueError:
            raise CurveFileError(f"column label {lab!r} is not a location", line, j + 1 + offset) from None
        if not 0.0 <= pts[j] <= 1.0:
            raise CurveFileError(f"location {lab} outside [0, 1]", line, j + 1 + offset)
        if j and pts[j] <= pts[j - 1]:
            raise CurveFileError("locations must be strictly increasing", line, j + 1 + offset)
    return pts


def parse_curves(text: str, drop_empty_columns: bool = False, delimiter: str | None = "auto") -> CurveMatrix:
    """Parse a curve matrix.

    The header row lists grid locations (reals in ``[0, 1]`` or increasing
    integer indices).  A non-numeric or empty first header cell marks a
    column of row labels.  Missing cells are ``NA`` or empty.  Lines starting
    with ``#`` are ignored.
    """
    rows = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise CurveFileError("empty curve file")
    head_no, head = rows[0]
    delim = _sniff(head) if delimiter == "auto" else delimiter
    header = _split(head, delim)
    labelled = not _is_number(header[0])
    labels = header[1:] if labelled else header
    offset = 1 if labelled else 0
    if not labels:
        raise CurveFileError("header lists no grid locations", head_no)
    points = _locations(labels, head_no, offset)
    q = len(labels)
    vals = np.full((len(rows) - 1, q), np.nan)
    row_labels = [] if labelled else None
    for r, (no, line) in enumerate(rows[1:]):
        cells = _split(line, delim)
        if len(cells) != len(header):
            raise CurveFileError(f"expected {len(header)} fields, found {len(cells)}", no)
        if labelled:
            row_labels.append(cells[0])
        for j, cell in enumerate(cells[offset:]):
            if cell in MISSING:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise CurveFileError(f"cannot parse value {cell!r}", no, j + 1 + offset) from None
            if not math.isfinite(v):
                raise CurveFileError(f"non-finite value {cell!r}", no, j + 1 + offset)
            vals[r, j] = v
    if vals.shape[0] < 2:
        raise CurveFileError("need at least two curves", head_no)
    mask = ~np.isnan(vals)
    empty = np.flatnonzero(~mask.any(axis=0))
    dropped = []
    if empty.size:
        if not drop_empty_columns:
            j = int(empty[0])
            raise CurveFileError(
                f"column {labels[j]!r} has no observed value (use --drop-empty-columns)", head_no, j + 1 + offset
            )
        keep = mask.any(axis=0)
        dropped = [labels[j] for j in empty]
        labels = [lab for lab, k in zip(labels, keep) if k]
        points, vals, mask = points[keep], vals[:, keep], mask[:, keep]
        if not labels:
            raise CurveFileError("every column is empty")
    ds = FunctionalDataset(Grid(points), mask, vals)
    return CurveMatrix(ds, row_labels, labels, dropped)


def read_curves(path, drop_empty_columns: bool = False, delimiter: str | None = "auto") -> CurveMatrix:
    return parse_curves(Path(path).read_text(), drop_empty_columns, delimiter)


def format_curves(ds: FunctionalDataset, row_labels=None, delimiter: str = "\t") -> str:
    """Tab-separated matrix with ``NA`` for missing cells and exact float text."""
    if row_labels is None:
        row_labels = [str(i) for i in range(1, ds.n + 1)]
    out = io.StringIO()
    out.write(delimiter.join(["curve", *(repr(float(u)) for u in ds.grid.points)]) + "\n")
    for lab, obs, row in zip(row_labels, ds.mask, ds.values):
        cells = [repr(float(v)) if o else "NA" for o, v in zip(obs, row)]
        out.write(delimiter.join([str(lab), *cells]) + "\n")
    return out.getvalue()


def write_curves(ds: FunctionalDataset, path, row_labels=None) -> None:
    Path(path).write_text(format_curves(ds, row_labels))


# --------------------------------------------------------------------------
# Study configs
# --------------------------------------------------------------------------

_LIST_KEYS = {
    "n": int, "kappa": float, "shape": str, "r": float, "delta": str, "missingness": str,
    "null": None, "stat": str, "gamma": float, "weights": str, "method": str, "eps": float,
    "buckets": str, "q": int,
}
_SCALAR_KEYS = {"reps": int, "seed": int, "alpha": float, "tau_max": int}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "h0", "null"):
        return True
    if low in ("0", "false", "no", "h1", "alt"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str) -> StudyConfig:
    """``key = value`` lines; list-valued keys take comma-separated values."""
    kw = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {no}: expected 'key = value'")
        if key in kw:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        try:
            if key in _LIST_KEYS:
                conv = _LIST_KEYS[key] or _bool
                if key == "delta":
                    items = [value]  # exp:a,b contains a comma
                    if not value.startswith("exp:"):
                        items = [v for v in value.split(",")]
                else:
                    items = value.split(",")
                kw[key] = [conv(v.strip()) for v in items if v.strip()]
                if not kw[key]:
                    raise ValueError("empty list")
            elif key in _SCALAR_KEYS:
                kw[key] = _SCALAR_KEYS[key](value)
            else:
                raise ConfigError(f"line {no}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {no}: bad value for {key!r}: {exc}") from None
    cfg = StudyConfig(**kw)
    if cfg.reps < 1:
        raise ConfigError("reps must be positive")
    try:
        cfg.cells()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def read_config(path) -> StudyConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# Records and tables
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class ResultRecord:
    """Outcome of one test together with everything needed to re-run it."""

    input: str
    n: int
    q: int
    shape: str
    gamma: float
    weights: str
    method: str
    eps: float
    buckets: str
    seed: int
    statistic: float
    k_hat: int
    p_value: float = float("nan")
    bucket: str = ""
    bucket_lo: float = float("nan")
    bucket_hi: float = float("nan")
    tau: int = 0
    s_tau: int = 0
    flagged: bool = False
    dropped_columns: str = ""

    def columns(self) -> list[str]:
        return [f.name for f in fields(self)]

    def to_tsv(self) -> str:
        row = asdict(self)
        return "\t".join(self.columns()) + "\n" + "\t".join(_fmt(row[c]) for c in self.columns()) + "\n"

    def to_json(self) -> str:
        row = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
        return json.dumps(row) + "\n"


def format_table(records: list[dict], columns=None) -> str:
    if not records:
        return ""
    columns = list(columns or records[0].keys())
    lines = ["\t".join(columns)]
    lines += ["\t".join(_fmt(r[c]) for c in columns) for r in records]
    return "\n".join(lines) + "\n"
