"""Deterministic CSV / JSON / NPZ writers.

Every file carries the tool name, version and config hash: CSV files in a
leading ``#`` comment line, JSON files in a ``meta`` block.  No timestamps
are written and floats use ``.17g``, so reruns are byte-identical.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from . import __version__
from .model import _jsonable

TOOL = "switchgrid"
REPORT_SCHEMA = 1


def meta(config_hash: str, **extra) -> dict:
    out = {"tool": TOOL, "version": __version__, "config_hash": config_hash,
           "report_schema": REPORT_SCHEMA}
    out.update(extra)
    return out


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".17g")
    return str(v)


def write_csv(path, header, rows, config_hash: str, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = meta(config_hash, **extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + " ".join(f"{k}={fmt(v)}" for k, v in m.items()) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _floats17(obj):
    if isinstance(obj, dict):
        return {k: _floats17(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_floats17(v) for v in obj]
    if isinstance(obj, float) and math.isfinite(obj):
        return float(format(obj, ".17g"))
    return obj


def write_json(path, payload: dict, config_hash: str, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": meta(config_hash, **extra)}
    doc.update(_floats17(_jsonable(payload)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False, default=str)
        fh.write("\n")


def read_csv(path):
    """Header and rows (as strings) of a file written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def write_field(path, field, policy, config_hash: str):
    """Full value field and policy for later commands (``barriers``, ``compare``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lat = field.lattice
    arrays = {"values": field.values, "actions": policy.actions, "times": field.times,
              "box": np.asarray(lat.box), "nodes": np.asarray(lat.nodes),
              "config_hash": np.asarray(config_hash)}
    # fixed member timestamps keep the archive byte-identical across runs
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def read_field(path):
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
