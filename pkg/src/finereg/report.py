"""Deterministic report writers (JSON + CSV) with atomic file replacement."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .scenario import SCHEMA_VERSION

CRITERIA_COLUMNS = ("schema_version", "point", "criterion", "verdict", "q", "total",
                    "extrapolated", "layer", "unresolved", "ray_integral", "c")
SHELL_COLUMNS = ("schema_version", "point", "criterion", "k", "r_lo", "r_hi", "count",
                 "shell_sum")
RAY_COLUMNS = ("schema_version", "point", "criterion", "t", "ratio")
MC_COLUMNS = ("schema_version", "point", "eps", "mean", "stderr", "retained", "discarded",
              "quadrature")
SWEEP_COLUMNS = ("schema_version", "param", "value", "point", "verdict", "consistent", "q", "c",
                 "criterion", "criterion_verdict", "criterion_q", "criterion_total")


def fmt(x):
    """Fixed 12-significant-digit rendering; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12g}"
    return str(x)


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else fmt(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_dict(result):
    sc = result.scenario
    points = []
    for p in result.points:
        crits = {}
        for name, rep in p.reports.items():
            crits[name] = {
                "verdict": rep.verdict, "q": rep.q, "total": rep.total,
                "extrapolated": rep.extrapolated, "layer": rep.layer,
                "unresolved": rep.unresolved,
                "shells": {"k": rep.k, "r_lo": rep.r_lo, "r_hi": rep.r_hi,
                           "count": rep.counts, "sum": rep.shells},
                "ray": {"t": rep.ts, "ratio": rep.ratios},
                "extras": rep.extras,
            }
        points.append({
            "index": p.index, "y": p.point.y, "nu": p.point.nu, "eta": p.point.eta,
            "verdict": p.verdict, "consistent": p.consistent, "votes": p.votes,
            "c": p.c, "criteria": crits, "montecarlo": p.montecarlo,
        })
    return _jsonable({"schema_version": SCHEMA_VERSION, "scenario": sc.name, "h": sc.h,
                      "domain": sc.domain.kind, "consistent": result.consistent,
                      "points": points})


def criteria_rows(result):
    for p in result.points:
        for name, rep in p.reports.items():
            yield (SCHEMA_VERSION, p.index, name, rep.verdict, rep.q, rep.total, rep.extrapolated,
                   rep.layer, rep.unresolved, rep.extras.get("ray_integral"),
                   rep.extras.get("c"))


def shell_rows(result):
    for p in result.points:
        for name, rep in p.reports.items():
            for k, lo, hi, n, s in zip(rep.k, rep.r_lo, rep.r_hi, rep.counts, rep.shells):
                yield (SCHEMA_VERSION, p.index, name, k, lo, hi, n, s)


def ray_rows(result):
    for p in result.points:
        for name, rep in p.reports.items():
            for t, r in zip(rep.ts, rep.ratios):
                yield (SCHEMA_VERSION, p.index, name, t, r)


def mc_rows(result):
    for p in result.points:
        for m in p.montecarlo:
            yield (SCHEMA_VERSION, p.index, m["eps"], m["mean"], m["stderr"], m["retained"],
                   m["discarded"], m["quadrature"])


def write_run(result, out_dir):
    """Write report.json and the CSV tables; returns the written paths."""
    paths = {
        "report.json": json.dumps(report_dict(result), indent=2, sort_keys=True) + "\n",
        "criteria.csv": csv_text(CRITERIA_COLUMNS, criteria_rows(result)),
        "shells.csv": csv_text(SHELL_COLUMNS, shell_rows(result)),
        "rays.csv": csv_text(RAY_COLUMNS, ray_rows(result)),
    }
    if result.scenario.montecarlo is not None:
        paths["montecarlo.csv"] = csv_text(MC_COLUMNS, mc_rows(result))
    out = []
    for name, text in paths.items():
        p = os.path.join(out_dir, name)
        atomic_write(p, text)
        out.append(p)
    return out


def headline_q(p):
    for name in ("integral-Ky", "relative-R", "integral-KyV", "smooth-explicit", "cone-test"):
        if name in p.reports:
            return p.reports[name].q
    return None


def sweep_rows(param, entries):
    """``entries`` is a list of (value, RunResult) in sweep order."""
    for value, result in entries:
        for p in result.points:
            for name, rep in p.reports.items():
                yield (SCHEMA_VERSION, param, value, p.index, p.verdict, p.consistent,
                       headline_q(p), p.c, name, rep.verdict, rep.q, rep.total)


__all__ = ["write_run", "sweep_rows", "csv_text", "atomic_write", "report_dict", "fmt",
           "CRITERIA_COLUMNS", "SHELL_COLUMNS", "RAY_COLUMNS", "MC_COLUMNS", "SWEEP_COLUMNS"]
