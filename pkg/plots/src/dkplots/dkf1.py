"""Reader for the "DKF1" field container.

The format, as written by the simulation harness: one record per stored
sample, each the 4-byte magic ``DKF1`` followed by a little-endian ``u64``
rank, ``u64`` shape per axis, ``f64`` time, and the row-major ``f64``
payload. Records are concatenated with no padding. Parsing is bit-exact:
the arrays returned here compare equal, NaN payloads and signed zeros
included, with what the emitter wrote.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DKF1"

# an axis count above this is corruption, not data
MAX_RANK = 16


class FormatError(ValueError):
    """Raised when a container does not parse."""


def read_fields(path) -> list[tuple[float, np.ndarray]]:
    """Return [(t, values), ...] for every record in the container."""
    blob = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated container: {what} at byte {pos} of {path}")
        out = blob[pos:pos + n]
        pos += n
        return out

    records = []
    while pos < len(blob):
        if take(4, "magic") != MAGIC:
            raise FormatError(f"bad magic at byte {pos - 4} in {path}")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        if not 1 <= rank <= MAX_RANK:
            raise FormatError(f"implausible axis count {rank} in {path}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "shape"))
        (t,) = struct.unpack("<d", take(8, "time"))
        count = 1
        for s in shape:
            count *= s
        payload = take(8 * count, "payload")
        values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        records.append((t, values))
    if not records:
        raise FormatError(f"no records in {path}")
    return records
