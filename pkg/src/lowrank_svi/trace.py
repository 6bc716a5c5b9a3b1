"""Per-iteration run diagnostics and their CSV representation.

Schema: one row per logged iteration with columns
    iter, grad_evals, rq_1..rq_p, kl, frob_err
where the rq/kl/frob_err cells are empty when no oracle reference was
attached to the run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError


@dataclass
class TraceRecord:
    iteration: int
    grad_evals: int
    rayleigh: tuple | None = None
    kl: float | None = None
    frob_err: float | None = None


@dataclass
class RunTrace:
    rank: int
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    initial_overlap: float | None = None   # sigma_min(U_inf_p' U0), oracle-only
    final_state: object = None

    def log(self, iteration, grad_evals, rayleigh=None, kl=None, frob_err=None):
        self.records.append(TraceRecord(iteration, grad_evals, rayleigh, kl, frob_err))

    @property
    def grad_evals(self):
        return self.records[-1].grad_evals if self.records else 0

    @property
    def final_kl(self):
        for rec in reversed(self.records):
            if rec.kl is not None:
                return rec.kl
        return None

    def metric_at_budget(self, budget, metric="kl"):
        """Latest logged metric value at cumulative cost <= budget."""
        value = None
        for rec in self.records:
            if rec.grad_evals > budget:
                break
            v = getattr(rec, "kl" if metric == "kl" else "frob_err")
            if v is not None:
                value = v
        return value

    def header(self):
        return (["iter", "grad_evals"]
                + [f"rq_{k + 1}" for k in range(self.rank)]
                + ["kl", "frob_err"])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for rec in self.records:
                rq = ["" for _ in range(self.rank)]
                if rec.rayleigh is not None:
                    for k, v in enumerate(rec.rayleigh):
                        rq[k] = repr(float(v))
                writer.writerow(
                    [rec.iteration, rec.grad_evals] + rq
                    + ["" if rec.kl is None else repr(float(rec.kl)),
                       "" if rec.frob_err is None else repr(float(rec.frob_err))])


def read_trace_csv(path):
    """Parse a trace CSV back into a RunTrace (diagnostic columns included)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"empty trace file {path}")
    header = rows[0]
    if header[:2] != ["iter", "grad_evals"] or header[-2:] != ["kl", "frob_err"]:
        raise ParseError(f"unexpected trace header in {path}", row=1)
    rank = len(header) - 4
    trace = RunTrace(rank=rank)
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"wrong column count in {path}", row=i)
        try:
            rq_cells = row[2:2 + rank]
            rayleigh = (tuple(float(c) for c in rq_cells)
                        if rank and all(c != "" for c in rq_cells) else None)
            trace.records.append(TraceRecord(
                iteration=int(row[0]),
                grad_evals=int(row[1]),
                rayleigh=rayleigh,
                kl=float(row[-2]) if row[-2] != "" else None,
                frob_err=float(row[-1]) if row[-1] != "" else None,
            ))
        except ValueError as exc:
            raise ParseError(f"bad cell in {path}: {exc}", row=i) from exc
    return trace


def traces_equal(a, b, rtol=0.0):
    """Numeric equality of two traces (used for reproducibility checks)."""
    if len(a.records) != len(b.records) or a.rank != b.rank:
        return False
    for ra, rb in zip(a.records, b.records):
        if ra.iteration != rb.iteration or ra.grad_evals != rb.grad_evals:
            return False
        for va, vb in ((ra.kl, rb.kl), (ra.frob_err, rb.frob_err)):
            if (va is None) != (vb is None):
                return False
            if va is not None and not np.isclose(va, vb, rtol=rtol, atol=0.0):
                return False
        if (ra.rayleigh is None) != (rb.rayleigh is None):
            return False
        if ra.rayleigh is not None and not np.allclose(ra.rayleigh, rb.rayleigh,
                                                       rtol=rtol, atol=0.0):
            return False
    return True
