"""The standard figure set over harness outputs.

Five kinds, one ``render`` entry point. Every kind reads stored arrays,
reduces them at most by an ensemble mean, and draws with a fixed style, so
rendering the same inputs twice produces identical image bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dkf1 import read_fields
from .inputs import (
    InputError,
    band_columns,
    diagnostics_files,
    ensemble_final_mean,
    field_files,
    read_diagnostics_csv,
    read_metadata,
    require_same_config,
)

KINDS = ("snapshot", "series", "contraction", "band_decay", "compare")

DEFAULT_SERIES_COLUMNS = ("mass", "l2_sq", "entropy", "hminus1_sq", "dissipation")

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "dkplots",
}


@dataclass
class FigureSpec:
    """What to draw: input run directory (or two), kind, output image path."""

    kind: str
    in_dir: str
    out_path: str
    in_dir2: str | None = None
    columns: tuple[str, ...] | None = None
    realization: int = 0
    record: int = -1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "compare" and self.in_dir2 is None:
            raise InputError("compare needs a second input directory")


# ---------------------------------------------------------------------------
# data loading, one pure function per kind


def load_snapshot(in_dir, realization=0):
    files = field_files(in_dir)
    if not 0 <= realization < len(files):
        raise InputError(
            f"realization {realization} out of range ({len(files)} stored)"
        )
    return read_fields(files[realization])


def load_series(in_dir, columns=None):
    columns = tuple(columns) if columns else DEFAULT_SERIES_COLUMNS
    per_run = []
    for f in diagnostics_files(in_dir):
        table = read_diagnostics_csv(f)
        missing = [c for c in columns if c not in table]
        if missing:
            raise InputError(f"{f} lacks columns {missing}")
        per_run.append(table)
    return columns, per_run


def load_contraction(in_dir):
    path = Path(in_dir) / "contraction.csv"
    table = read_diagnostics_csv(path)
    pairs = sorted(name for name in table if name.startswith("d_r"))
    if "t" not in table or not pairs:
        raise InputError(f"{path} is not a contraction distance table")
    return table["t"], {name: table[name] for name in pairs}


def load_band_decay(in_dir):
    """Ensemble mean of the final stored q-band values, by band upper edge."""
    finals = {}
    for f in diagnostics_files(in_dir):
        table = read_diagnostics_csv(f)
        bands = band_columns(table)
        if not bands:
            raise InputError(f"{f} has no q-band columns")
        for lo, hi, name in bands:
            finals.setdefault(hi, []).append(table[name][-1])
    betas = np.array(sorted(finals, reverse=True))
    means = np.array([np.mean(finals[b]) for b in betas])
    return betas, means


def load_compare(in_dir, in_dir2):
    cfg_hash = require_same_config([in_dir, in_dir2])
    t1, mean_fields = ensemble_final_mean(in_dir, "fields_r*.dkf1")
    t2, mean_particles = ensemble_final_mean(in_dir2, "particle_density_r*.dkf1")
    if not np.isclose(t1, t2, rtol=1e-9, atol=0.0):
        raise InputError(f"final times differ: {t1} vs {t2}")
    if mean_fields.shape != mean_particles.shape:
        raise InputError(
            f"grid mismatch: {mean_fields.shape} vs {mean_particles.shape}"
        )
    return t1, mean_fields, mean_particles, cfg_hash


# ---------------------------------------------------------------------------
# rendering


def _finish(fig, out_path):
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)
    return out_path


def _axis_label(values):
    return "cell index" if values.ndim == 1 else None


def _render_snapshot(spec):
    records = load_snapshot(spec.in_dir, spec.realization)
    meta = read_metadata(spec.in_dir)
    fig, ax = plt.subplots()
    first = records[0][1]
    if first.ndim == 1:
        cmap = plt.get_cmap("viridis")
        denom = max(len(records) - 1, 1)
        for i, (t, values) in enumerate(records):
            ax.plot(np.arange(values.size), values, color=cmap(i / denom),
                    label=f"t = {t:g}")
        ax.set_xlabel("cell index")
        ax.set_ylabel("density")
        ax.legend(fontsize=7, ncols=2)
    elif first.ndim == 2:
        t, values = records[spec.record]
        im = ax.imshow(values.T, origin="lower", cmap="viridis", aspect="auto")
        fig.colorbar(im, ax=ax, label="density")
        ax.set_xlabel("cell index (axis 0)")
        ax.set_ylabel("cell index (axis 1)")
        ax.set_title(f"t = {t:g}")
    else:
        raise InputError(f"snapshot supports 1D/2D fields, got rank {first.ndim}")
    fig.suptitle(
        f"density snapshot, realization {spec.realization} "
        f"[{meta['config_hash'][:12]}]"
    )
    return _finish(fig, spec.out_path)


def _render_series(spec):
    columns, per_run = load_series(spec.in_dir, spec.columns)
    meta = read_metadata(spec.in_dir)
    fig, axes = plt.subplots(len(columns), 1, sharex=True,
                             figsize=(7.0, 1.7 * len(columns) + 1.0))
    axes = np.atleast_1d(axes)
    for ax, name in zip(axes, columns):
        for r, table in enumerate(per_run):
            ax.plot(table["t"], table[name], label=f"r{r}")
        ax.set_ylabel(name)
    axes[-1].set_xlabel("t")
    axes[0].legend(fontsize=7, ncols=4)
    fig.suptitle(f"diagnostics series [{meta['config_hash'][:12]}]")
    return _finish(fig, spec.out_path)


def _render_contraction(spec):
    t, pairs = load_contraction(spec.in_dir)
    meta = read_metadata(spec.in_dir)
    fig, ax = plt.subplots()
    for name, d in pairs.items():
        ax.plot(t, d, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("L1 distance")
    ax.set_title(
        f"shared-noise pair distances, {len(pairs)} pairs "
        f"[{meta['config_hash'][:12]}]"
    )
    return _finish(fig, spec.out_path)


def _render_band_decay(spec):
    betas, means = load_band_decay(spec.in_dir)
    meta = read_metadata(spec.in_dir)
    fig, ax = plt.subplots()
    ax.plot(betas, means, marker="o")
    for b, m in zip(betas, means):
        ax.annotate(f"{m:.3g}", (b, m), textcoords="offset points",
                    xytext=(4, 4), fontsize=7)
    ax.set_xlabel("band upper edge beta")
    ax.set_ylabel("final q_band")
    ax.set_title(f"kinetic band mass near zero [{meta['config_hash'][:12]}]")
    return _finish(fig, spec.out_path)


def _render_compare(spec):
    t, mean_fields, mean_particles, cfg_hash = load_compare(spec.in_dir, spec.in_dir2)
    fig, ax = plt.subplots()
    if mean_fields.ndim != 1:
        raise InputError("compare overlays 1D densities only")
    x = np.arange(mean_fields.size)
    ax.plot(x, mean_fields, label="field ensemble mean")
    ax.plot(x, mean_particles, linestyle="--", label="particle ensemble mean")
    ax.set_xlabel("cell index")
    ax.set_ylabel("density")
    ax.set_title(f"field vs particle means at t = {t:g} [{cfg_hash[:12]}]")
    ax.legend(fontsize=8)
    return _finish(fig, spec.out_path)


_RENDERERS = {
    "snapshot": _render_snapshot,
    "series": _render_series,
    "contraction": _render_contraction,
    "band_decay": _render_band_decay,
    "compare": _render_compare,
}


def render(spec: FigureSpec) -> Path:
    """Draw the figure described by ``spec`` and return the written path."""
    with matplotlib.rc_context(_STYLE):
        return _RENDERERS[spec.kind](spec)
