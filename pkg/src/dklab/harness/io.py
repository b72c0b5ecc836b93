"""Persistence: the "DKF1" binary container, diagnostics CSV, metadata JSON.

DKF1 layout, repeated once per record, all little-endian:

    4 bytes   magic b"DKF1"
    u64       number of axes
    u64 * d   cells per axis
    f64       time stamp
    f64 * n   row-major cell values

The format is deliberately dumb: parseable from any language, bit-exact on
round trip.  CSV floats are written with ``repr``, which is the shortest
exact decimal, so text outputs are also reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .. import __version__
from .config import config_hash

MAGIC = b"DKF1"


class FormatError(ValueError):
    pass


def write_fields(path, times, fields) -> None:
    """Write records (t, array) to one container file."""
    times = list(times)
    fields = list(fields)
    if len(times) != len(fields):
        raise ValueError("times and fields differ in length")
    with open(path, "wb") as fh:
        for t, values in zip(times, fields):
            values = np.ascontiguousarray(values, dtype="<f8")
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
            fh.write(struct.pack("<d", float(t)))
            fh.write(values.tobytes())


def read_fields(path):
    """Read back [(t, array), ...]; raises FormatError on any corruption."""
    out = []
    raw = Path(path).read_bytes()
    pos, end = 0, len(raw)

    def take(n, what):
        nonlocal pos
        if pos + n > end:
            raise FormatError(f"truncated container: expected {what} at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    while pos < end:
        if take(4, "magic") != MAGIC:
            raise FormatError(f"bad magic at byte {pos - 4}")
        (ndim,) = struct.unpack("<Q", take(8, "axis count"))
        if ndim == 0 or ndim > 64:
            raise FormatError(f"implausible axis count {ndim}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
        (t,) = struct.unpack("<d", take(8, "time"))
        count = int(np.prod(shape))
        values = np.frombuffer(take(8 * count, "values"), dtype="<f8").reshape(shape)
        out.append((t, values.copy()))
    return out


def write_diagnostics_csv(path, records) -> None:
    """One header row, then one row per record, floats via repr."""
    rows = [rec.as_row() if hasattr(rec, "as_row") else dict(rec) for rec in records]
    if not rows:
        raise ValueError("no records to write")
    header = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(row.get(k, np.nan))) for k in header])


def read_diagnostics_csv(path) -> dict:
    """Columns as float arrays, keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {k: [] for k in header}
        for row in reader:
            for k, v in zip(header, row):
                cols[k].append(float(v))
    return {k: np.asarray(v) for k, v in cols.items()}


def write_metadata(path, doc: dict, extra: dict | None = None) -> None:
    """Deterministic run metadata: config, its hash, seed, code version.
    No timestamps: outputs must be bitwise-reproducible from (config, seed)."""
    meta = {
        "format": "dklab-run",
        "version": __version__,
        "config": doc,
        "config_hash": config_hash(doc),
        "seed": int(doc.get("seed", 0)),
    }
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_metadata(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
