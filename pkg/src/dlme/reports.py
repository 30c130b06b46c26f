"""Output files: atomic writes, matrix CSVs, JSON reports and summary plots."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import NetworkCase
from .scheduler import DispatchSolution

SIGNAL_TYPES = ("dlme", "dlme_q", "dlae", "rodm")

# timings differ between runs and would break byte-identical reports
VOLATILE_KEYS = frozenset({"solve_time", "elapsed", "runtime_s"})


def fmt(value: float) -> str:
    return "%.6g" % value


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings, volatile keys dropped."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, payload) -> Path:
    return atomic_write(path, json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def matrix_csv(matrix: np.ndarray, row_ids, signal: str = "") -> str:
    """Bus-by-hour matrix; first column the bus id, then one column per hour."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    T = matrix.shape[1]
    w.writerow(["bus"] + [f"h{t + 1}" for t in range(T)])
    for rid, row in zip(row_ids, matrix):
        w.writerow([rid] + [fmt(v) for v in row])
    return buf.getvalue()


def write_matrix(path, matrix: np.ndarray, case: NetworkCase) -> Path:
    return atomic_write(path, matrix_csv(matrix, [b.id for b in case.buses]))


def read_matrix(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def _entity_ids(case: NetworkCase) -> dict:
    branch_ids = [f"{case.buses[i].id}-{case.buses[j].id}" for _, i, j in case.oriented_branches()]
    return {
        "p_inv": [u.id for u in case.inverter_dg],
        "q_inv": [u.id for u in case.inverter_dg],
        "q_abs_inv": [u.id for u in case.inverter_dg],
        "p_sync": [g.id for g in case.sync_dg],
        "q_sync": [g.id for g in case.sync_dg],
        "q_abs_sync": [g.id for g in case.sync_dg],
        "p_branch": branch_ids,
        "q_branch": branch_ids,
        "l_branch": branch_ids,
        "v_bus": [b.id for b in case.buses],
        "p_cha": [e.id for e in case.storage],
        "p_dis": [e.id for e in case.storage],
        "e_sto": [e.id for e in case.storage],
        "p_ev": [v.id for v in case.ev],
    }


def dispatch_csv(sol: DispatchSolution, case: NetworkCase) -> str:
    """Long table: variable, entity, then one column per hour (MW, MVar, MWh, p.u.)."""
    ids = _entity_ids(case)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable", "entity"] + [f"h{t + 1}" for t in range(case.horizon)])
    for name in sorted(sol.values):
        arr = np.asarray(sol.values[name], dtype=float)
        if arr.ndim == 1:
            w.writerow([name, "substation" if name.endswith("sub") else ""] + [fmt(v) for v in arr])
            continue
        labels = ids.get(name, [str(k) for k in range(arr.shape[0])])
        for label, row in zip(labels, arr):
            w.writerow([name, label] + [fmt(v) for v in row])
    return buf.getvalue()


def hourly_summary(matrix: np.ndarray) -> dict:
    """Per-hour min, quartiles and max over buses."""
    q = np.percentile(matrix, [0, 25, 50, 75, 100], axis=0)
    return {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}


def summary_svg(path, summary: dict, title: str, ylabel: str) -> Path | None:
    """Box-style per-hour distribution plot; skipped when matplotlib is missing."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    matplotlib.rcParams["svg.hashsalt"] = "dlme"
    hours = np.arange(1, len(summary["min"]) + 1)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.fill_between(hours, summary["min"], summary["max"], color="0.85", label="min-max")
    ax.fill_between(hours, summary["q1"], summary["q3"], color="0.6", label="quartiles")
    ax.plot(hours, summary["median"], color="k", lw=1.2, label="median")
    ax.set_xlabel("hour")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def report_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        out = []
        for c in columns:
            v = r.get(c, "")
            out.append(fmt(v) if isinstance(v, (float, np.floating)) else v)
        w.writerow(out)
    return buf.getvalue()
