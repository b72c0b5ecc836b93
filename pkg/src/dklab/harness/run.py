"""Ensemble execution, the coupled contraction experiment, and benchmarks.

Concurrency lives only here: one realization per worker, sequential stepping
inside each.  Worker results are keyed by realization id and aggregated in id
order, so completion order cannot change any output byte.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..coeffs import make_coeffs, make_sigma
from ..grid import build_grid
from ..noise import NoiseField, NoiseSpec, make_stream
from ..particles import ParticleRun, run_particles
from ..solver import SolverParams, run_path
from .config import CouplingConfig, RunConfig
from .io import write_diagnostics_csv, write_fields, write_metadata

#: particle ensembles draw from stream ids offset far above SPDE realizations
PARTICLE_STREAM_BASE = 2**32


def _execute_one(doc: dict, realization: int):
    """Worker body: one full trajectory, returned as plain arrays."""
    cfg = RunConfig(doc)
    traj = run_path(
        cfg.rho0,
        cfg.params,
        cfg.coeffs,
        cfg.rs,
        cfg.noise,
        make_stream(cfg.seed, realization),
        bands=cfg.bands or None,
    )
    rows = [rec.as_row() for rec in traj.records]
    return realization, traj.times, traj.fields, rows


def _execute_many(doc: dict, realizations, threads: int = 1, runner=None):
    """Run the given realization ids; failures are isolated per realization."""
    runner = runner or _execute_one
    results, failures = {}, []
    if threads > 1 and runner is _execute_one:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {r: pool.submit(_execute_one, doc, r) for r in realizations}
            for r, fut in futures.items():
                try:
                    results[r] = fut.result()[1:]
                except Exception as err:
                    failures.append((r, f"{type(err).__name__}: {err}"))
    else:
        for r in realizations:
            try:
                results[r] = runner(doc, r)[1:]
            except Exception as err:
                failures.append((r, f"{type(err).__name__}: {err}"))
    return results, failures


def run(config: RunConfig, out_dir, threads: int = 1) -> dict:
    """Execute every realization and persist all artifacts.

    Writes fields_rNNNN.dkf1 and diagnostics_rNNNN.csv per realization plus
    metadata.json.  Any failure is recorded in the metadata (partial outputs
    stay labeled) and re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = list(range(config.realizations))
    results, failures = _execute_many(config.doc, ids, threads=threads)
    paths = {}
    for r in sorted(results):
        times, fields, rows = results[r]
        fpath = out / f"fields_r{r:04d}.dkf1"
        cpath = out / f"diagnostics_r{r:04d}.csv"
        write_fields(fpath, times, fields)
        write_diagnostics_csv(cpath, rows)
        paths[r] = (fpath, cpath)
    status = {"status": "complete" if not failures else "partial"}
    if failures:
        status["failures"] = [{"realization": r, "error": m} for r, m in failures]
    write_metadata(out / "metadata.json", config.doc, extra=status)
    if failures:
        raise RuntimeError(
            f"{len(failures)} of {len(ids)} realizations failed; "
            f"first: r{failures[0][0]}: {failures[0][1]}"
        )
    return paths


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    columns: dict  # name -> {"mean", "var", "se"} arrays over sample times
    n_ok: int
    failures: list


def ensemble(config: RunConfig, realizations: int | None = None, threads: int = 1,
             runner=None, out_dir=None) -> EnsembleStats:
    """Mean/variance/standard error of every diagnostics column across
    realizations.  A failed worker drops only its own realization."""
    R = config.realizations if realizations is None else int(realizations)
    if R < 1:
        raise ValueError("need at least one realization")
    results, failures = _execute_many(config.doc, list(range(R)), threads, runner)
    if not results:
        raise RuntimeError(f"all {R} realizations failed: {failures}")

    ordered = [results[r] for r in sorted(results)]
    times = np.asarray(ordered[0][0], float)
    names = list(ordered[0][2][0].keys())
    columns = {}
    for name in names:
        if name == "t":
            continue
        data = np.array([[row[name] for row in rows] for _, _, rows in ordered])
        mean = data.mean(axis=0)
        var = data.var(axis=0, ddof=1) if data.shape[0] > 1 else np.zeros(data.shape[1])
        columns[name] = {"mean": mean, "var": var, "se": np.sqrt(var / data.shape[0])}
    stats = EnsembleStats(times, columns, len(ordered), failures)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i, t in enumerate(times):
            row = {"t": t}
            for name, blocks in columns.items():
                for stat in ("mean", "var", "se"):
                    row[f"{name}_{stat}"] = blocks[stat][i]
            rows.append(row)
        write_diagnostics_csv(out / "ensemble.csv", rows)
        write_metadata(out / "metadata.json", config.doc,
                       extra={"aggregated": len(ordered),
                              "failed": [r for r, _ in failures]})
    return stats


@dataclass(frozen=True)
class ContractionResult:
    times: np.ndarray
    distances: np.ndarray  # (pairs, sample times)
    ratios: np.ndarray  # per pair max_t d(t) / d(0)
    pass_flags: np.ndarray
    pass_rate: float
    slack: float
    theta: float

    @property
    def verdict(self) -> str:
        return "PASS" if self.pass_rate >= 0.95 else "FAIL"


def _l1_distance(f1, f2, V):
    return float(np.abs(np.asarray(f1) - np.asarray(f2)).sum()) * V


def contraction_experiment(coupling: CouplingConfig, out_dir=None) -> ContractionResult:
    """Coupled pairs driven by identical increments; distance series
    d(t) = ||rho1 - rho2||_L1 per pair, pass iff max_t d <= d(0) (1 + slack)."""
    cfg = coupling.base
    V = cfg.grid.cell_volume
    distances, ratios, flags = [], [], []
    times = None
    for r in range(cfg.realizations):
        t1 = run_path(cfg.rho0, cfg.params, cfg.coeffs, cfg.rs, cfg.noise,
                      make_stream(cfg.seed, r))
        t2 = run_path(coupling.rho0_second, cfg.params, cfg.coeffs, cfg.rs, cfg.noise,
                      make_stream(cfg.seed, r))
        d = np.array([_l1_distance(a, b, V) for a, b in zip(t1.fields, t2.fields)])
        distances.append(d)
        times = np.asarray(t1.times)
        if d[0] == 0.0:
            flags.append(bool(d.max() == 0.0))
            ratios.append(np.nan if d.max() == 0.0 else np.inf)
        else:
            ratios.append(float(d.max() / d[0]))
            flags.append(bool(d.max() <= d[0] * (1.0 + coupling.slack)))
    result = ContractionResult(
        times,
        np.asarray(distances),
        np.asarray(ratios),
        np.asarray(flags, dtype=bool),
        float(np.mean(flags)),
        coupling.slack,
        cfg.params.theta,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i, t in enumerate(result.times):
            row = {"t": t}
            for r in range(len(result.distances)):
                row[f"d_r{r:04d}"] = result.distances[r][i]
            rows.append(row)
        write_diagnostics_csv(out / "contraction.csv", rows)
        write_metadata(out / "metadata.json", cfg.doc, extra={
            "pass_rate": result.pass_rate,
            "verdict": result.verdict,
            "slack": result.slack,
        })
    return result


def particle_experiment(config: RunConfig, out_dir=None) -> list[ParticleRun]:
    """Particle ensembles matching the config's coefficient field; one run per
    realization, streams disjoint from the SPDE ones."""
    block = config.doc.get("particles")
    if not block:
        raise ValueError("configuration has no 'particles' block")
    runs = []
    for r in range(config.realizations):
        runs.append(
            run_particles(
                int(block["n"]),
                config.coeffs,
                float(block.get("T", config.params.T)),
                float(block.get("dt", config.params.dt)),
                make_stream(config.seed, PARTICLE_STREAM_BASE + r),
                float(block["bandwidth"]),
                record_every=int(block.get("record_every", 1)),
            )
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r, prun in enumerate(runs):
            write_fields(out / f"particle_density_r{r:04d}.dkf1",
                         prun.times, prun.densities)
            write_fields(out / f"particle_positions_r{r:04d}.dkf1",
                         [prun.final.t], [prun.final.positions])
        write_metadata(out / "metadata.json", config.doc, extra={"kind": "particles"})
    return runs


def heat_benchmark(cells=(64, 128), T: float = 1.0 / 16.0) -> dict:
    """Zero-noise identity-coefficient run against the separated cosine
    solution 1 + exp(-pi^2 t) cos(pi x); dt scales with spacing^2."""
    errors = []
    for N in cells:
        grid = build_grid([1.0], [int(N)])
        coeffs = make_coeffs(grid, "identity")
        noise = NoiseField(NoiseSpec.of([(0.0, (1,))], 1), grid, coeffs)
        h = grid.spacing[0]
        dt = h * h / 8.0
        x = grid.cell_centers()[0]
        params = SolverParams(dt=dt, T=T, theta=0.5, record_every=10**9)
        traj = run_path(1.0 + np.cos(np.pi * x), params, coeffs, make_sigma(4),
                        noise, make_stream(0, 0))
        exact = 1.0 + np.exp(-np.pi**2 * T) * np.cos(np.pi * x)
        errors.append(float(np.abs(traj.final - exact).max()))
    orders = [
        float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)
    ]
    return {"cells": [int(N) for N in cells], "errors": errors, "orders": orders}
