"""Batch figure scripts: one subcommand per figure kind, `--in`/`--out` flags."""

from __future__ import annotations

import argparse
import sys

from .figures import DEFAULT_SERIES_COLUMNS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dkplots", description="figure scripts for simulation run outputs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--in", dest="in_dir", required=True, help="run directory")
        p.add_argument("--out", dest="out_path", required=True, help="image path")

    p = sub.add_parser("snapshot", help="stored density records of one realization")
    common(p)
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--record", type=int, default=-1,
                   help="record index for 2D heatmaps")
    p.set_defaults(kind="snapshot")

    p = sub.add_parser("series", help="diagnostic columns against time")
    common(p)
    p.add_argument("--columns", default=",".join(DEFAULT_SERIES_COLUMNS),
                   help="comma-separated diagnostics columns")
    p.set_defaults(kind="series")

    p = sub.add_parser("contraction", help="shared-noise pair distance curves")
    common(p)
    p.set_defaults(kind="contraction")

    p = sub.add_parser("band-decay", help="final q-band masses by band edge")
    common(p)
    p.set_defaults(kind="band_decay")

    p = sub.add_parser("compare", help="field vs particle ensemble means")
    common(p)
    p.add_argument("--in2", dest="in_dir2", required=True,
                   help="particle run directory")
    p.set_defaults(kind="compare")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec_kwargs = dict(kind=args.kind, in_dir=args.in_dir, out_path=args.out_path)
    if args.kind == "compare":
        spec_kwargs["in_dir2"] = args.in_dir2
    if args.kind == "series":
        spec_kwargs["columns"] = tuple(
            c for c in args.columns.split(",") if c
        )
    if args.kind == "snapshot":
        spec_kwargs["realization"] = args.realization
        spec_kwargs["record"] = args.record
    try:
        path = render(FigureSpec(**spec_kwargs))
    except Exception as err:
        print(f"dkplots: error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
