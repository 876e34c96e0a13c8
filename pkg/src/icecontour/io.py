"""icegrid v1 field files, atomic writes and small CSV/JSON helpers.

An icegrid v1 field is a JSON header ``<stem>.json`` plus a sibling raw file
``<stem>.raw`` holding row-major little-endian values: uint8 for binary
fields and masks, float32 otherwise. Binary fields store 255 on non-scored
cells; float fields store NaN.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import (BinaryField, CellMask, ConcentrationField, GridError, GridSpec,
                   ProbabilityField, RasterField)

FORMAT = "icegrid"
VERSION = 1
BINARY_MISSING = 255

_KINDS = {
    "binary": BinaryField,
    "concentration": ConcentrationField,
    "probability": ProbabilityField,
    "raster": RasterField,
}


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return "" if v is None else v


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".raw") else path


def _write(path, grid, kind, payload: np.ndarray, meta):
    stem = _stem(path)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "grid": grid.to_dict(),
        "kind": kind,
        "dtype": "uint8" if payload.dtype == np.uint8 else "float32",
        "data": stem.name + ".raw",
    }
    header.update(meta)
    atomic_write_bytes(stem.with_suffix(".raw"), np.ascontiguousarray(payload).tobytes(order="C"))
    dump_json(stem.with_suffix(".json"), header)
    return stem.with_suffix(".json")


def write_field(path, field):
    """Write any field kind; returns the header path."""
    v = field.values
    if field.kind == "binary":
        payload = np.where(np.isnan(v), BINARY_MISSING, v).astype(np.uint8)
    else:
        payload = v.astype("<f4")
    lead = None if field.lead is None else float(field.lead)
    return _write(path, field.grid, field.kind, payload,
                  {"year": field.year, "month": field.month, "lead": lead})


def write_mask(path, mask: CellMask):
    stem = _stem(path)
    meta = {"year": None, "month": None, "lead": None}
    area = mask.cell_area
    if np.any(area != mask.grid.cell_size_x * mask.grid.cell_size_y):
        area_path = stem.parent / (stem.name + "_area.raw")
        atomic_write_bytes(area_path, area.astype("<f4").tobytes())
        meta["area_data"] = area_path.name
    return _write(path, mask.grid, "mask", mask.encode(), meta)


def _read_header(path):
    stem = _stem(path)
    hdr_path = stem.with_suffix(".json")
    if not hdr_path.exists():
        raise FileNotFoundError(f"icegrid header not found: {hdr_path}")
    header = load_json(hdr_path)
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise GridError(f"{hdr_path} is not an icegrid v1 header")
    grid = GridSpec.from_dict(header["grid"])
    raw_path = hdr_path.parent / header.get("data", stem.name + ".raw")
    dtype = np.uint8 if header.get("dtype", "float32") == "uint8" else np.dtype("<f4")
    data = np.fromfile(raw_path, dtype=dtype)
    if data.size != grid.nrows * grid.ncols:
        raise GridError(f"{raw_path} holds {data.size} values, expected {grid.nrows * grid.ncols}")
    return header, grid, data.reshape(grid.shape), hdr_path.parent


def read_field(path):
    header, grid, data, _ = _read_header(path)
    kind = header["kind"]
    if kind not in _KINDS:
        raise GridError(f"unsupported field kind {kind!r}")
    if kind == "binary":
        values = np.where(data == BINARY_MISSING, np.nan, data.astype(float))
    else:
        values = data.astype(float)
    lead = header.get("lead")
    return _KINDS[kind](grid, values, header.get("year"), header.get("month"), lead)


def read_mask(path) -> CellMask:
    header, grid, data, folder = _read_header(path)
    if header["kind"] != "mask":
        raise GridError(f"{path} is a {header['kind']} file, not a mask")
    area = None
    if header.get("area_data"):
        area = np.fromfile(folder / header["area_data"], dtype="<f4").astype(float).reshape(grid.shape)
    return CellMask.decode(grid, data, area)
