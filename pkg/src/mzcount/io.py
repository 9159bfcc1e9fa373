"""CSV ingestion and output, contingency tables, risk profiles and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .observations import ObservationSet

FORMATS = ("rows-csv", "contingency-csv")


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based (0 when not tied to a line)."""

    def __init__(self, message: str, line: int = 0, path=None):
        where = f"{path}: " if path else ""
        where += f"line {line}: " if line else ""
        super().__init__(where + message)
        self.line = line


def bundled_path(name: str) -> Path:
    """Path of a file shipped in ``mzcount/data``."""
    return Path(str(resources.files("mzcount") / "data" / name))


def _parse_int(text: str, line: int, column: str, path) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{column}={text!r} is not a number", line, path) from None
    if not np.isfinite(value) or value != int(value):
        raise ParseError(f"{column}={text!r} is not an integer", line, path)
    if value < 0:
        raise ParseError(f"{column}={text!r} is negative", line, path)
    return int(value)


def _parse_float(text: str, line: int, column: str, path) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{column}={text!r} is not a number", line, path) from None
    if not np.isfinite(value):
        raise ParseError(f"{column}={text!r} is not finite", line, path)
    return value


def _read_lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as err:
        raise ParseError(f"not UTF-8 text ({err})", 0, path) from None
    rows = [(k + 1, r) for k, r in enumerate(csv.reader(_io.StringIO(text)))]
    rows = [(k, [c.strip() for c in r]) for k, r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("file is empty", 0, path)
    return rows


# -- contingency tables ------------------------------------------------------------


@dataclass
class ContingencyTable:
    """Cell counts of a two-margin count table."""

    counts: dict = field(default_factory=dict)
    m: int = 2

    def __post_init__(self):
        for cell, c in self.counts.items():
            if len(cell) != self.m or min(cell) < 0 or c < 0:
                raise ValueError(f"invalid cell {cell} -> {c}")

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))

    def to_observations(self) -> ObservationSet:
        """One weighted row per nonempty cell (intercept-only design)."""
        cells = sorted(k for k, v in self.counts.items() if v > 0)
        Z = np.array(cells, dtype=np.int64).reshape(len(cells), self.m)
        w = np.array([self.counts[c] for c in cells], dtype=float)
        return ObservationSet(Z, None, w)

    def expand(self) -> ObservationSet:
        """One row per observation."""
        return self.to_observations().expand()

    @classmethod
    def from_observations(cls, data: ObservationSet) -> "ContingencyTable":
        if data.p != 0:
            raise ValueError("a contingency table cannot hold covariates")
        counts: dict = {}
        for z, w in zip(map(tuple, data.counts.tolist()), data.weights):
            if w % 1 != 0:
                raise ValueError("contingency counts must be integers")
            counts[z] = counts.get(z, 0) + int(w)
        return cls(counts, data.m)


def read_contingency_csv(path) -> ContingencyTable:
    rows = _read_lines(path)
    line, header = rows[0]
    if [h.lower() for h in header] != ["z1", "z2", "count"]:
        raise ParseError(f"expected header z1,z2,count, got {','.join(header)}", line, path)
    counts: dict = {}
    for line, row in rows[1:]:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", line, path)
        z1 = _parse_int(row[0], line, "z1", path)
        z2 = _parse_int(row[1], line, "z2", path)
        c = _parse_int(row[2], line, "count", path)
        counts[(z1, z2)] = counts.get((z1, z2), 0) + c
    if not counts or sum(counts.values()) == 0:
        raise ParseError("table has no observations", 0, path)
    return ContingencyTable(counts)


# -- row files ----------------------------------------------------------------------


def _split_header(header, line, path):
    m = 0
    while m < len(header) and header[m].lower() == f"z{m + 1}":
        m += 1
    rest = header[m:]
    for k, name in enumerate(rest):
        if name.lower() != f"x{k + 1}":
            raise ParseError(f"unknown column {name!r}; expected z1..zm then x1..xp", line, path)
    if m < 2:
        raise ParseError("need at least two count columns z1, z2", line, path)
    return m, len(rest)


def read_rows_csv(path) -> ObservationSet:
    rows = _read_lines(path)
    line, header = rows[0]
    m, p = _split_header(header, line, path)
    width = m + p
    Z = np.empty((len(rows) - 1, m), dtype=np.int64)
    X = np.empty((len(rows) - 1, p))
    for i, (line, row) in enumerate(rows[1:]):
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line, path)
        for j in range(m):
            Z[i, j] = _parse_int(row[j], line, header[j], path)
        for k in range(p):
            X[i, k] = _parse_float(row[m + k], line, header[m + k], path)
    if Z.shape[0] == 0:
        raise ParseError("file has a header but no rows", 0, path)
    return ObservationSet.from_covariates(Z, X if p else None, names=[f"x{k + 1}" for k in range(p)])


def detect_format(path) -> str:
    rows = _read_lines(path)
    header = [h.lower() for h in rows[0][1]]
    return "contingency-csv" if header == ["z1", "z2", "count"] else "rows-csv"


def ingest(path, format: Optional[str] = None) -> ObservationSet:
    """Read a rows-csv or contingency-csv file into an ObservationSet.

    The intercept column is added automatically.  Contingency tables become
    one weighted row per cell.
    """
    fmt = format or detect_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    if fmt == "contingency-csv":
        return read_contingency_csv(path).to_observations()
    return read_rows_csv(path)


def _fmt_number(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def rows_csv_text(data: ObservationSet) -> str:
    """rows-csv rendering; weighted rows are repeated by their integer weight."""
    if np.any(data.weights % 1 != 0):
        raise ValueError("rows-csv output needs integer weights")
    data = data if np.all(data.weights == 1) else data.expand()
    header = [f"z{j + 1}" for j in range(data.m)] + [f"x{k + 1}" for k in range(data.p)]
    lines = [",".join(header)]
    for z, x in zip(data.counts.tolist(), data.design[:, 1:].tolist()):
        lines.append(",".join([str(v) for v in z] + [_fmt_number(v) for v in x]))
    return "\n".join(lines) + "\n"


def contingency_csv_text(table: ContingencyTable) -> str:
    lines = ["z1,z2,count"]
    for cell in sorted(table.counts):
        if table.counts[cell] > 0:
            lines.append(f"{cell[0]},{cell[1]},{table.counts[cell]}")
    return "\n".join(lines) + "\n"


def header_only_rows_csv(m: int, p: int) -> str:
    return ",".join([f"z{j + 1}" for j in range(m)] + [f"x{k + 1}" for k in range(p)]) + "\n"


# -- risk profiles --------------------------------------------------------------------


@dataclass
class RiskProfile:
    name: str
    values: np.ndarray

    @property
    def design_row(self) -> np.ndarray:
        return np.concatenate([[1.0], np.asarray(self.values, dtype=float)])


def read_profiles_csv(path) -> list:
    rows = _read_lines(path)
    line, header = rows[0]
    if not header or header[0].lower() != "name":
        raise ParseError("first column must be 'name'", line, path)
    for k, name in enumerate(header[1:]):
        if name.lower() != f"x{k + 1}":
            raise ParseError(f"unknown column {name!r}; expected x1..xp", line, path)
    out = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line, path)
        vals = np.array([_parse_float(v, line, header[k + 1], path) for k, v in enumerate(row[1:])])
        out.append(RiskProfile(row[0], vals))
    return out


# -- manifests ----------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: Optional[int] = None
    input_digest: Optional[str] = None
    tool_version: str = __version__
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tool": "mzcount",
            "tool_version": self.tool_version,
            "command": self.command,
            "seed": self.seed,
            "input_digest": self.input_digest,
            "config": self.config,
            "wall_time_seconds": self.wall_time,
        }


def manifest_path(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"Object of type {type(o).__name__} is not JSON serializable")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True, default=_json_default) + "\n"


def write_manifest(out_path, manifest: RunManifest) -> Path:
    path = manifest_path(out_path)
    write_text(path, dumps(manifest.to_dict()))
    return path


def thread_cap(default: Optional[int] = None) -> int:
    """Thread budget from ``MZCOUNT_THREADS`` (at least 1)."""
    raw = os.environ.get("MZCOUNT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return default or min(8, os.cpu_count() or 1)
