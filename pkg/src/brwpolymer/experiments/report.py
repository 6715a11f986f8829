"""Run reports and their CSV / JSONL serialisation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .. import __version__

STAT_COLUMNS = ["experiment", "statistic", "estimate", "standard_error", "target", "tolerance", "pass"]


@dataclass
class Statistic:
    name: str
    estimate: float
    standard_error: float
    target: Optional[float] = None
    tolerance: Optional[float] = None
    passed: Optional[bool] = None


@dataclass
class RunReport:
    experiment: str
    params: dict
    seed: int
    config_hash: str
    statistics: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    wall_clock: float = 0.0

    def add(self, name, estimate, se, target=None, tolerance=None, passed=None) -> Statistic:
        s = Statistic(name, float(estimate), float(se), _opt(target), _opt(tolerance), passed if passed is None else bool(passed))
        self.statistics.append(s)
        return s

    def stat(self, name: str) -> Statistic:
        for s in self.statistics:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def all_pass(self) -> bool:
        return all(s.passed for s in self.statistics if s.passed is not None)

    @property
    def failures(self) -> list:
        return [s.name for s in self.statistics if s.passed is False]

    def metadata(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": __version__,
            "wall_clock": round(self.wall_clock, 3),
            "all_pass": self.all_pass,
        }

    def write(self, out_dir, fmt: str = "csv") -> list:
        """Statistics and tables as CSV (or JSONL), plus a JSONL metadata line.

        Everything except the metadata file is a pure function of the
        configuration and seed.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.experiment.replace("-", "_")
        written = []
        rows = [
            [self.experiment, s.name, _num(s.estimate), _num(s.standard_error), _num(s.target),
             _num(s.tolerance), "" if s.passed is None else str(s.passed).lower()]
            for s in self.statistics
        ]
        tables = {"statistics": (STAT_COLUMNS, rows), **self.tables}
        for name, (cols, trows) in tables.items():
            if fmt == "csv":
                p = out / f"{stem}_{name}.csv"
                with open(p, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(cols)
                    for r in trows:
                        w.writerow([_num(x) if isinstance(x, float) else x for x in r])
            elif fmt == "jsonl":
                p = out / f"{stem}_{name}.jsonl"
                with open(p, "w") as fh:
                    for r in trows:
                        fh.write(json.dumps(dict(zip(cols, [_json(x) for x in r])), sort_keys=True) + "\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")
            written.append(p)
        meta = out / f"{stem}_run.jsonl"
        with open(meta, "a") as fh:
            fh.write(json.dumps(self.metadata(), sort_keys=True) + "\n")
        written.append(meta)
        return written


def _opt(x):
    return None if x is None else float(x)


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _json(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if hasattr(x, "item"):
        return x.item()
    return x


def report_dict(report: RunReport) -> dict:
    d = report.metadata()
    d["statistics"] = [asdict(s) for s in report.statistics]
    return d
