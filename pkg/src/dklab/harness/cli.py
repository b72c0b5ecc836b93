"""Command line front end.

Subcommands: simulate (ensemble of trajectories), couple (shared-noise
contraction experiment), particles (reflecting-diffusion ensembles),
diagnose (recompute diagnostics from stored fields), bench (deterministic
heat benchmark).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from types import SimpleNamespace

from ..diagnostics import DiagnosticsContext, compute_record
from .config import CouplingConfig, RunConfig
from .io import read_fields, read_metadata, write_diagnostics_csv
from .run import (
    contraction_experiment,
    heat_benchmark,
    particle_experiment,
    run,
)


def _load_doc(path: str, args) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "realizations", None) is not None:
        doc["ensemble"] = args.realizations
    return doc


def _add_common(sub, realizations=True):
    sub.add_argument("--config", required=True, help="JSON configuration file")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--out", default="out", help="output directory")
    if realizations:
        sub.add_argument("--realizations", type=int, default=None,
                         help="override ensemble size")


def _cmd_simulate(args) -> int:
    cfg = RunConfig(_load_doc(args.config, args))
    paths = run(cfg, args.out, threads=args.threads)
    print(f"wrote {len(paths)} realizations to {args.out} (hash {cfg.hash[:12]})")
    return 0


def _cmd_couple(args) -> int:
    coupling = CouplingConfig(RunConfig(_load_doc(args.config, args)))
    result = contraction_experiment(coupling, out_dir=args.out)
    print(
        f"contraction: theta={result.theta} pairs={len(result.pass_flags)} "
        f"pass_rate={result.pass_rate:.3f} slack={result.slack} -> {result.verdict}"
    )
    return 0


def _cmd_particles(args) -> int:
    cfg = RunConfig(_load_doc(args.config, args))
    runs = particle_experiment(cfg, out_dir=args.out)
    print(f"wrote {len(runs)} particle runs to {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    src = Path(args.in_dir)
    meta = read_metadata(src / "metadata.json")
    cfg = RunConfig(meta["config"])
    ctx = DiagnosticsContext(cfg.grid, cfg.coeffs, cfg.rs, cfg.noise)
    out = Path(args.out or args.in_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for fpath in sorted(src.glob("fields_r*.dkf1")):
        records = [
            compute_record(SimpleNamespace(values=v, t=t), cfg.coeffs, cfg.rs,
                           cfg.noise, context=ctx)
            for t, v in read_fields(fpath)
        ]
        write_diagnostics_csv(out / fpath.name.replace("fields_", "diagnose_")
                              .replace(".dkf1", ".csv"), records)
        n += 1
    if n == 0:
        raise FileNotFoundError(f"no fields_r*.dkf1 under {src}")
    print(f"recomputed diagnostics for {n} trajectories")
    return 0


def _cmd_bench(args) -> int:
    cells = [int(c) for c in args.cells.split(",")]
    result = heat_benchmark(cells=cells)
    for N, err in zip(result["cells"], result["errors"]):
        print(f"cells={N} max_error={err:.3e}")
    for i, order in enumerate(result["orders"]):
        print(f"order({result['cells'][i]}->{result['cells'][i + 1]}) = {order:.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.json", "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dklab",
        description="conservative stochastic diffusion laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an ensemble of trajectories")
    _add_common(p)
    p.add_argument("--threads", type=int, default=1, help="realization workers")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("couple", help="shared-noise contraction experiment")
    _add_common(p)
    p.set_defaults(fn=_cmd_couple)

    p = sub.add_parser("particles", help="reflecting-diffusion ensembles")
    _add_common(p)
    p.set_defaults(fn=_cmd_particles)

    p = sub.add_parser("diagnose", help="recompute diagnostics from stored fields")
    p.add_argument("--in", dest="in_dir", required=True, help="run directory")
    p.add_argument("--out", default=None, help="target directory (default: --in)")
    p.set_defaults(fn=_cmd_diagnose)

    p = sub.add_parser("bench", help="deterministic heat benchmark")
    p.add_argument("--cells", default="64,128", help="comma-separated grid sizes")
    p.add_argument("--out", default=None, help="write bench.json here")
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as err:
        print(f"dklab: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
