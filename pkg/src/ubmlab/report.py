"""Report objects and their CSV/JSON serialization.

A report is a header (tool version, experiment kind, the full validated
configuration) plus a list of rows sharing one column order. Floats are
written with 17 significant digits so that ``parse(emit(r)) == r``; nothing
time-dependent is ever written, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from . import __version__

PASSING = ("pass",)


@dataclass
class Report:
    kind: str
    inputs: Dict[str, Any]
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    version: str = __version__

    def add(self, row: Dict[str, Any]) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ValueError(f"unknown report columns {sorted(unknown)}")
        # an empty string and a missing value are the same cell in CSV; store both as None
        self.rows.append({c: (None if row.get(c) == "" else row.get(c)) for c in self.columns})

    @property
    def verdicts(self) -> List[str]:
        return [r["verdict"] for r in self.rows if r.get("verdict") not in (None, "")]

    @property
    def all_pass(self) -> bool:
        return all(v in PASSING for v in self.verdicts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Report):
            return NotImplemented
        return (self.kind, self.version, self.columns) == (other.kind, other.version, other.columns) \
            and _canon(self.inputs) == _canon(other.inputs) and _canon(self.rows) == _canon(other.rows)


def _canon(obj):
    return json.loads(_dumps(obj))


# --------------------------------------------------------------------------
# JSON with fixed float formatting


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if all(ch in "-0123456789" for ch in s):
        s += ".0"
    return s


def _dumps(obj: Any, indent: int = 0, step: int = 2) -> str:
    pad = " " * (indent + step)
    end = " " * indent
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(int(obj))
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if hasattr(obj, "item") and not isinstance(obj, (list, tuple, dict)):
        return _dumps(obj.item(), indent, step)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dumps(v, indent + step, step)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _dumps(v, indent + step, step) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --------------------------------------------------------------------------
# Emission


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if hasattr(v, "item"):
        return _cell(v.item())
    return str(v)


def _type_of(values: List[Any]) -> str:
    kinds = {("bool" if isinstance(v, bool) else "int" if isinstance(v, int)
              else "float" if isinstance(v, float) else "str")
             for v in values if v is not None}
    if not kinds:
        return "str"
    if kinds == {"int", "float"}:
        return "float"
    if len(kinds) > 1:
        return "str"
    return kinds.pop()


def emit_json(report: Report) -> str:
    return _dumps({"kind": report.kind, "version": report.version, "inputs": report.inputs,
                   "columns": report.columns,
                   "rows": [[r.get(c) for c in report.columns] for r in report.rows]}) + "\n"


def emit_csv(report: Report) -> str:
    types = [_type_of([r.get(c) for r in report.rows]) for c in report.columns]
    buf = io.StringIO()
    buf.write(f"# ubmlab-report kind={report.kind} version={report.version}\n")
    buf.write("# inputs=" + _dumps(report.inputs, step=0).replace("\n", "") + "\n")
    buf.write("# types=" + ",".join(types) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for r in report.rows:
        w.writerow([_cell(r.get(c)) for c in report.columns])
    return buf.getvalue()


def emit(report: Report, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """Write ``report`` as CSV or JSON (chosen from the suffix unless ``fmt`` is given)."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    text = emit_json(report) if fmt == "json" else emit_csv(report)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


# --------------------------------------------------------------------------
# Parsing


def _parse_cell(text: str, typ: str) -> Any:
    if text == "":
        return None
    if typ == "bool":
        return text == "true"
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    return text


def parse_json(text: str) -> Report:
    d = json.loads(text)
    cols = list(d["columns"])
    rows = [dict(zip(cols, r)) for r in d["rows"]]
    return Report(d["kind"], d["inputs"], cols, rows, d["version"])


def parse_csv(text: str) -> Report:
    lines = text.splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    meta = dict(item.split("=", 1) for item in header[0][1:].split()[1:])
    inputs = json.loads(header[1].split("=", 1)[1])
    types = header[2].split("=", 1)[1].split(",")
    reader = list(csv.reader(body))
    cols = reader[0]
    rows = [{c: _parse_cell(v, t) for c, v, t in zip(cols, r, types)} for r in reader[1:]]
    return Report(meta["kind"], inputs, cols, rows, meta["version"])


def parse(path: Union[str, Path]) -> Report:
    path = Path(path)
    text = path.read_text()
    return parse_json(text) if path.suffix == ".json" or text.lstrip().startswith("{") else parse_csv(text)
