"""Verification reports: check records, JSON round trip, CSV and plot-data output."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

CSV_HEADER = ("name", "anchor", "measured", "bound", "tolerance", "passed")


def _clean(value):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if hasattr(value, "tolist"):
        value = value.tolist()
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    return value


def _restore(value):
    if value == "nan":
        return float("nan")
    if value == "inf":
        return float("inf")
    if value == "-inf":
        return float("-inf")
    if isinstance(value, list):
        return [_restore(v) for v in value]
    if isinstance(value, dict):
        return {k: _restore(v) for k, v in value.items()}
    return value


@dataclass
class CheckRecord:
    """One verified claim.

    ``anchor`` names the mathematical statement the check exercises,
    ``measured`` the computed quantity and ``bound`` what it is compared to.
    ``series`` maps a label to ``[[x, y], ...]`` pairs for plotting.
    """

    name: str
    anchor: str
    measured: object
    bound: object
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "CheckRecord":
        d = _restore(dict(data))
        d["passed"] = bool(d["passed"])
        return cls(**d)


@dataclass
class VerificationReport:
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def add(self, record: CheckRecord) -> CheckRecord:
        self.records.append(record)
        return record

    def extend(self, other: "VerificationReport") -> None:
        self.records.extend(other.records)
        self.metadata.update(other.metadata)
        self.timings.update(other.timings)

    def to_dict(self, timings: bool = True) -> dict:
        out = {"passed": self.passed,
               "metadata": _clean(self.metadata),
               "records": [r.to_dict() for r in self.records]}
        if timings:
            out["timings"] = _clean(self.timings)
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)

    def canonical_json(self) -> str:
        """JSON without timings: identical runs give identical text."""
        return self.to_json(timings=False)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        data = json.loads(text)
        return cls([CheckRecord.from_dict(r) for r in data["records"]],
                   _restore(data.get("metadata", {})), _restore(data.get("timings", {})))

    def summary_lines(self) -> list:
        return [f"{'PASS' if r.passed else 'FAIL'}  {r.name}  [{r.anchor}]  "
                f"measured={_short(r.measured)} bound={_short(r.bound)}" for r in self.records]


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)) and len(v) > 4:
        return f"[{len(v)} values]"
    return str(v)


def _open_for_write(path):
    path = Path(path)
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_report(report: VerificationReport, path) -> None:
    with _open_for_write(path) as fh:
        fh.write(report.to_json())
        fh.write("\n")


def read_report(path) -> VerificationReport:
    return VerificationReport.from_json(Path(path).read_text())


def emit_csv(report: VerificationReport, path) -> None:
    """One row per record under :data:`CSV_HEADER`; lists are written as JSON."""
    with _open_for_write(path) as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_HEADER)
        for r in report.records:
            wr.writerow([r.name, r.anchor, _cell(r.measured), _cell(r.bound),
                         repr(float(r.tolerance)), "true" if r.passed else "false"])


def _cell(v) -> str:
    v = _clean(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return str(v)


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def emit_plotdata(report: VerificationReport, path) -> list:
    """Write each record series as a two-column ``x y`` text file.

    ``path`` is a directory (created if needed); files are named
    ``<record>__<series>.dat``.  Returns the written paths.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    written = []
    for r in report.records:
        for label, pairs in r.series.items():
            fn = out / f"{_slug(r.name)}__{_slug(label)}.dat"
            with _open_for_write(fn) as fh:
                fh.write(f"# {r.name}: {label}\n")
                for x, y in pairs:
                    fh.write(f"{float(x)!r} {float(y)!r}\n")
            written.append(fn)
    return written
