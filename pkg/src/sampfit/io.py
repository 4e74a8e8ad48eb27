"""File formats: grids, checkpoints, loss traces, mixture records, reports.

All writers produce byte-identical output for identical inputs (no
timestamps, sorted keys, fixed float formatting).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .core import GridDensity, MixtureDistribution

GRID_MAGIC = "SAMPFIT-GRID 1"
CKPT_MAGIC = b"SAMPFIT-CKPT 1\n"


def digest(obj) -> str:
    """Short sha256 of a JSON-serializable object (canonical form)."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_digest(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# -- grids ------------------------------------------------------------------------

def write_grids(path, grids, tag: str = "") -> None:
    """Header line ``magic width height count cx cy ox oy tag`` then float64 LE masses."""
    grids = list(grids)
    g0 = grids[0]
    for g in grids:
        if not g.same_shape(g0):
            raise ValueError("all grids in one file must share their geometry")
    head = (f"{GRID_MAGIC} {g0.width} {g0.height} {len(grids)} {g0.cell[0]!r} {g0.cell[1]!r} "
            f"{g0.origin[0]!r} {g0.origin[1]!r} {tag or '-'}\n")
    with open(path, "wb") as f:
        f.write(head.encode())
        for g in grids:
            f.write(np.ascontiguousarray(g.mass, dtype="<f8").tobytes())


def read_grids(path) -> list[GridDensity]:
    with open(path, "rb") as f:
        head = f.readline().decode().split()
        if " ".join(head[:2]) != GRID_MAGIC:
            raise ValueError(f"{path} is not a grid file")
        w, h, n = int(head[2]), int(head[3]), int(head[4])
        cell = (float(head[5]), float(head[6]))
        origin = (float(head[7]), float(head[8]))
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != w * h * n:
        raise ValueError(f"{path}: expected {w * h * n} values, found {data.size}")
    return [GridDensity(m.copy(), cell, origin) for m in data.reshape(n, h, w)]


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, meta: dict, arrays) -> None:
    """Magic line, one JSON line (meta + array shapes), then raw float64 arrays."""
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in arrays]
    header = dict(meta)
    header["arrays"] = [list(a.shape) for a in arrays]
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.readline() != CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        header = json.loads(f.readline())
        blob = f.read()
    arrays, off = [], 0
    for shape in header.pop("arrays"):
        n = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += 8 * n
    return header, arrays


# -- traces, mixtures, reports --------------------------------------------------------

def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["iteration", "phase", "loss"])
        for it, phase, loss in trace.rows:
            wr.writerow([it, phase, repr(float(loss))])


def read_trace(path) -> list:
    with open(path, newline="") as f:
        return [(int(r["iteration"]), r["phase"], float(r["loss"])) for r in csv.DictReader(f)]


def mixtures_to_json(mixtures) -> str:
    return json.dumps([m.to_record() for m in mixtures], sort_keys=True, indent=1)


def mixtures_from_json(text: str) -> list[MixtureDistribution]:
    return [MixtureDistribution.from_record(r) for r in json.loads(text)]


REPORT_FIELDS = ["method", "metric", "value", "n", "seed"]


def write_report(path, rows, comment: str = "") -> None:
    """CSV rows (method, metric, value, n, seed); optional leading ``# comment``."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(REPORT_FIELDS)
    for r in rows:
        wr.writerow([r["method"], r["metric"], f"{float(r['value']):.10g}", int(r["n"]), r["seed"]])
    Path(path).write_text(buf.getvalue())


def read_report(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        rows.append({"method": r["method"], "metric": r["metric"], "value": float(r["value"]),
                     "n": int(r["n"]), "seed": r["seed"]})
    return rows
