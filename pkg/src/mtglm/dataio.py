"""CSV ingestion and the JSON/CSV serialization shared by the CLI and reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA = "mtglm/1"


class ValidationError(ValueError):
    """Input file or command-line settings are unusable."""


@dataclass
class Dataset:
    """Design with a leading column of ones, counts, and column names."""

    X: np.ndarray
    y: np.ndarray
    columns: list
    response: str

    @property
    def coef_names(self) -> list:
        return ["(intercept)"] + list(self.columns)

    def select(self, columns) -> "Dataset":
        missing = [c for c in columns if c not in self.columns]
        if missing:
            raise ValidationError(f"unknown covariate column(s): {', '.join(missing)}")
        idx = [0] + [self.columns.index(c) + 1 for c in columns]
        return Dataset(self.X[:, idx], self.y, list(columns), self.response)


def _number(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, response: str = "y") -> Dataset:
    """Read a header-row CSV; every column except ``response`` is a covariate.

    Rows are numbered from 1 (the first data row) in error messages.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError("empty file: a header row is required")
    header = [h.strip() for h in rows[0]]
    if any(_number(h) is not None for h in header) or any(h == "" for h in header):
        raise ValidationError("missing or malformed header row")
    if len(set(header)) != len(header):
        raise ValidationError("duplicate column names in the header")
    if response not in header:
        raise ValidationError(f"response column {response!r} not in header")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if len(body) < 2:
        raise ValidationError("at least 2 data rows are required")
    r_idx = header.index(response)
    covs = [h for h in header if h != response]
    y = np.empty(len(body))
    Z = np.empty((len(body), len(covs)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise ValidationError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        v = _number(row[r_idx].strip())
        if v is None or v < 0 or v != int(v):
            raise ValidationError(f"row {i}: response {row[r_idx]!r} is not a nonnegative integer")
        y[i - 1] = v
        j = 0
        for h, cell in zip(header, row):
            if h == response:
                continue
            x = _number(cell.strip())
            if x is None:
                raise ValidationError(f"column {h!r}: non-numeric or missing value {cell!r} in row {i}")
            Z[i - 1, j] = x
            j += 1
    X = np.column_stack([np.ones(len(body)), Z])
    return Dataset(X, y, covs, response)


def format_float(x) -> str:
    """17 significant digits, enough for an exact round trip."""
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return f"{x:.17g}"


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([data.response] + list(data.columns))
    for yi, row in zip(data.y, data.X[:, 1:]):
        w.writerow([str(int(yi))] + [format_float(v) for v in row])
    return buf.getvalue()


def _encode(o) -> str:
    if o is None or isinstance(o, (bool, np.bool_)):
        return json.dumps(None if o is None else bool(o))
    if isinstance(o, (int, np.integer)):
        return str(int(o))
    if isinstance(o, (float, np.floating)):
        # JSON has no NaN/Inf literals
        return format_float(o) if math.isfinite(o) else "null"
    if isinstance(o, str):
        return json.dumps(o)
    if isinstance(o, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in o.items()) + "}"
    if isinstance(o, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in (o.tolist() if isinstance(o, np.ndarray) else o)) + "]"
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(doc: dict) -> str:
    """JSON text with floats at 17 significant digits and the schema key first."""
    return _encode({"schema": SCHEMA, **{k: v for k, v in doc.items() if k != "schema"}}) + "\n"


def table_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()
