"""Readers for the harness run directory: diagnostics CSV and metadata JSON.

These scripts are consumers only. They parse what the simulation harness
wrote and never recompute physics; the only derived quantities are display
reductions (ensemble means over already-stored arrays).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dkf1 import read_fields


class InputError(ValueError):
    """Missing, unparsable, or mutually inconsistent inputs."""


def read_diagnostics_csv(path) -> dict[str, np.ndarray]:
    """Columns as float arrays, keyed by header name.

    The harness serializes floats with ``repr``, so ``float()`` here
    reconstructs the exact stored doubles.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) if v else np.nan for v in row] for row in reader]
    except (OSError, ValueError, StopIteration) as err:
        raise InputError(f"cannot parse diagnostics CSV {path}: {err}") from err
    if not rows:
        raise InputError(f"no data rows in {path}")
    cols = np.asarray(rows, float).T
    return {name: cols[i] for i, name in enumerate(header)}


def read_metadata(run_dir) -> dict:
    path = Path(run_dir) / "metadata.json"
    try:
        with path.open(encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot parse {path}: {err}") from err
    if "config_hash" not in meta:
        raise InputError(f"{path} lacks a config_hash entry")
    return meta


def require_same_config(run_dirs) -> str:
    """The shared config hash of several run directories.

    Overlaying runs of different configurations in one figure is refused:
    every ``metadata.json`` must carry the same ``config_hash``.
    """
    hashes = {d: read_metadata(d)["config_hash"] for d in run_dirs}
    distinct = sorted(set(hashes.values()))
    if len(distinct) > 1:
        detail = ", ".join(f"{Path(d).name}: {h[:12]}" for d, h in hashes.items())
        raise InputError(f"config hash mismatch across overlaid runs ({detail})")
    return distinct[0]


def field_files(run_dir, pattern="fields_r*.dkf1") -> list[Path]:
    files = sorted(Path(run_dir).glob(pattern))
    if not files:
        raise InputError(f"no {pattern} under {run_dir}")
    return files


def diagnostics_files(run_dir) -> list[Path]:
    files = sorted(Path(run_dir).glob("diagnostics_r*.csv"))
    if not files:
        raise InputError(f"no diagnostics_r*.csv under {run_dir}")
    return files


def ensemble_final_mean(run_dir, pattern="fields_r*.dkf1"):
    """(t, mean over realizations of the last stored record)."""
    finals = []
    t_final = None
    for f in field_files(run_dir, pattern):
        t, values = read_fields(f)[-1]
        if t_final is not None and not np.isclose(t, t_final, rtol=1e-12, atol=0.0):
            raise InputError(f"inconsistent final times under {run_dir}")
        t_final = t
        finals.append(values)
    return t_final, np.mean(finals, axis=0)


def band_columns(columns) -> list[tuple[float, float, str]]:
    """(lo, hi, column_name) for every q-band column, sorted by upper edge."""
    out = []
    for name in columns:
        if name.startswith("qband_"):
            try:
                lo, hi = name[len("qband_"):].split("_")
                out.append((float(lo), float(hi), name))
            except ValueError as err:
                raise InputError(f"malformed band column {name!r}") from err
    out.sort(key=lambda item: item[1])
    return out
