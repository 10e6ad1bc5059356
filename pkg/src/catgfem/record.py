"""Per-level run history, its CSV form, and convergence-rate helpers."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["CSV_HEADER", "LevelRecord", "RunRecord", "read_csv", "loglog_slope",
           "interp_loglog", "CsvSchemaError"]

CSV_HEADER = ["k", "n_elements", "n_dofs", "eta", "energy_err", "l2_err",
              "coarse_iters", "fine_iters", "wall_ms"]


class CsvSchemaError(ValueError):
    pass


@dataclass
class LevelRecord:
    k: int
    n_elements: int
    n_dofs: int
    eta: float
    energy_err: Optional[float] = None
    l2_err: Optional[float] = None
    coarse_report: object = None
    fine_report: object = None
    wall_time: float = 0.0
    orth_residual: Optional[float] = None
    correction_norm: Optional[float] = None
    n_marked: int = 0
    quasi_error: Optional[float] = None  # sqrt(energy_err^2 + weight * eta^2)

    def csv_row(self, timings=True):
        def opt(v):
            return "" if v is None else repr(float(v))

        def iters(rep):
            return "" if rep is None else str(rep.iterations)

        wall = repr(round(self.wall_time * 1e3, 3)) if timings else ""
        return [str(self.k), str(self.n_elements), str(self.n_dofs), repr(float(self.eta)),
                opt(self.energy_err), opt(self.l2_err), iters(self.coarse_report),
                iters(self.fine_report), wall]


@dataclass
class RunRecord:
    problem: str
    algorithm: str
    theta: float
    rows: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def cap_reached(self) -> bool:
        return self.stop_reason in ("max_elements", "max_iterations")

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows],
                        dtype=float)

    def write_csv(self, fh, timings=True):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_row(timings))

    def to_csv(self, timings=True) -> str:
        buf = io.StringIO()
        self.write_csv(buf, timings)
        return buf.getvalue()


def read_csv(path):
    """Parse a run CSV into a dict of float arrays (NaN for empty fields)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise CsvSchemaError(f"{path}: line 1: header does not match {','.join(CSV_HEADER)}")
        cols = {name: [] for name in CSV_HEADER}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CsvSchemaError(f"{path}: line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            for name, val in zip(CSV_HEADER, row):
                try:
                    cols[name].append(float(val) if val != "" else math.nan)
                except ValueError:
                    raise CsvSchemaError(f"{path}: line {lineno}: bad value {val!r} in {name}") from None
    if not cols["k"]:
        raise CsvSchemaError(f"{path}: no data rows")
    return {k: np.array(v) for k, v in cols.items()}


def loglog_slope(n, err):
    """Least-squares slope of log(err) against log(n)."""
    n = np.asarray(n, dtype=float)
    err = np.asarray(err, dtype=float)
    return float(np.polyfit(np.log(n), np.log(err), 1)[0])


def interp_loglog(n_ref, n, err):
    """Piecewise-linear interpolation of log(err) in log(n) at ``n_ref``."""
    return np.exp(np.interp(np.log(n_ref), np.log(n), np.log(err)))
