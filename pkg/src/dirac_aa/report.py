"""Reports: check records, values and tables, rendered as line-oriented TOML or JSON.

Reports hold no timings so that identical inputs give byte-identical files;
elapsed times go to a separate ``timings.txt``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FORMAT = 1
STATUSES = ("pass", "fail", "warn", "info")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARSE_ERROR = 2
EXIT_NUMERIC_ERROR = 3


def _num(v: float) -> float:
    """Round to 11 significant digits so that the rendering is stable."""
    v = float(v)
    if not math.isfinite(v) or v == 0.0:
        return v
    return float(f"{v:.10e}")


@dataclass
class CheckRecord:
    name: str
    status: str
    residual: float | None = None
    threshold: float | None = None
    worst_point: tuple[float, ...] | None = None
    detail: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")

    @classmethod
    def upper(cls, name: str, residual: float, threshold: float, worst=None, detail: str = "") -> "CheckRecord":
        """Passes when residual ≤ threshold."""
        ok = bool(np.isfinite(residual) and residual <= threshold)
        return cls(name, "pass" if ok else "fail", float(residual), float(threshold),
                   None if worst is None else tuple(float(v) for v in worst), detail)

    @classmethod
    def lower(cls, name: str, value: float, threshold: float, worst=None, detail: str = "") -> "CheckRecord":
        """Passes when value > threshold (lower bounds such as independence margins)."""
        ok = bool(np.isfinite(value) and value > threshold)
        return cls(name, "pass" if ok else "fail", float(value), float(threshold),
                   None if worst is None else tuple(float(v) for v in worst),
                   detail or "value must exceed the threshold")

    def as_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "status": self.status}
        if self.residual is not None:
            d["residual"] = _num(self.residual)
        if self.threshold is not None:
            d["threshold"] = _num(self.threshold)
        if self.worst_point is not None:
            d["worst_point"] = [_num(v) for v in self.worst_point]
        d["detail"] = self.detail
        return d


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: np.ndarray

    def csv_text(self) -> str:
        lines = [",".join(self.columns)]
        for row in np.atleast_2d(self.rows):
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def dat_text(self) -> str:
        lines = ["# " + " ".join(self.columns)]
        for row in np.atleast_2d(self.rows):
            lines.append(" ".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12e}"


@dataclass
class Report:
    scenario: str
    command: str
    checks: list[CheckRecord] = field(default_factory=list)
    values: dict[str, Any] = field(default_factory=dict)
    tables: list[Table] = field(default_factory=list)
    error: str | None = None
    error_code: int = EXIT_OK

    def add(self, rec: CheckRecord) -> CheckRecord:
        self.checks.append(rec)
        return rec

    def extend(self, recs: Sequence[CheckRecord]) -> None:
        self.checks.extend(recs)

    @property
    def failed(self) -> list[CheckRecord]:
        return [c for c in self.checks if c.status == "fail"]

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        return "fail" if self.failed else "pass"

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return self.error_code
        return EXIT_CHECK_FAILED if self.failed else EXIT_OK

    def as_dict(self) -> dict:
        d: dict[str, Any] = {"format": FORMAT, "scenario": self.scenario, "command": self.command,
                             "status": self.status}
        if self.error is not None:
            d["error"] = self.error
        d["check"] = [c.as_dict() for c in self.checks]
        d["values"] = {k: _plain(v) for k, v in self.values.items()}
        d["table"] = [{"name": t.name, "file": f"{t.name}.csv", "columns": list(t.columns),
                       "rows": int(np.atleast_2d(t.rows).shape[0])} for t in self.tables]
        return d

    def to_text(self) -> str:
        return render_toml(self.as_dict())

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.as_dict()), indent=2) + "\n"

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            r = "" if c.residual is None else f"  residual={c.residual:.3e}"
            t = "" if c.threshold is None else f" threshold={c.threshold:.1e}"
            lines.append(f"{c.status.upper():4s}  {c.name}{r}{t}")
        if self.error:
            lines.append(f"ERROR {self.error}")
        lines.append(f"status: {self.status} ({len(self.checks)} checks, {len(self.failed)} failed)")
        return "\n".join(lines) + "\n"


def _plain(v):
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    return v


# ---------------------------------------------------------------------------
# A small TOML writer for the report subset (scalars, arrays, tables, arrays of tables)
# ---------------------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{_key(k)} = {_toml_value(x)}" for k, x in v.items()) + " }"
    raise TypeError(f"cannot render {type(v).__name__}")


def _key(k: str) -> str:
    return k if k.replace("_", "").replace("-", "").isalnum() and k.isascii() else json.dumps(k)


def render_toml(d: dict) -> str:
    lines = ["# dirac-aa report"]
    tables = []
    for k, v in d.items():
        if isinstance(v, dict):
            tables.append((k, v, False))
        elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
            tables.append((k, v, True))
        elif isinstance(v, list) and not v:
            continue
        else:
            lines.append(f"{_key(k)} = {_toml_value(v)}")
    for k, v, many in tables:
        for item in (v if many else [v]):
            lines.append("")
            lines.append(f"[[{k}]]" if many else f"[{k}]")
            for kk, vv in item.items():
                lines.append(f"{_key(kk)} = {_toml_value(vv)}")
    return "\n".join(lines) + "\n"


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "scenario", "command", "status", "check", "values", "table"],
    "properties": {
        "format": {"const": FORMAT},
        "scenario": {"type": "string"},
        "command": {"type": "string"},
        "status": {"enum": ["pass", "fail", "error"]},
        "error": {"type": "string"},
        "check": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "status", "detail"],
                "properties": {
                    "name": {"type": "string"},
                    "status": {"enum": list(STATUSES)},
                    "residual": {"type": ["number", "null"]},
                    "threshold": {"type": ["number", "null"]},
                    "worst_point": {"type": "array", "items": {"type": ["number", "null"]}},
                    "detail": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
        "values": {"type": "object"},
        "table": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "file", "columns", "rows"],
                "properties": {
                    "name": {"type": "string"},
                    "file": {"type": "string"},
                    "columns": {"type": "array", "items": {"type": "string"}},
                    "rows": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
    "additionalProperties": False,
}


def write_outputs(report: Report, out: Path, as_json: bool = False) -> Path:
    """Write the report, the tables as CSV and as plot-ready .dat files."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / ("report.json" if as_json else "report.toml")
    path.write_text(report.to_json() if as_json else report.to_text(), encoding="utf-8", newline="\n")
    if report.tables:
        plot = out / "plotdata"
        plot.mkdir(exist_ok=True)
        for t in report.tables:
            (out / f"{t.name}.csv").write_text(t.csv_text(), encoding="utf-8", newline="\n")
            (plot / f"{t.name}.dat").write_text(t.dat_text(), encoding="utf-8", newline="\n")
    return path
