"""Acceptance check: golden-container fidelity plus the full figure set.

Prints one verdict line; run with ``pytest tests/test_acceptance.py -s``.
"""

import json

from dkplots.dkf1 import read_fields
from dkplots.figures import KINDS, FigureSpec, render

PNG_HEADER = b"\x89PNG\r\n\x1a\n"


def test_golden_round_trip_and_all_figure_kinds(data_dir, tmp_path):
    expected = json.loads((data_dir / "golden_expected.json").read_text())
    records = read_fields(data_dir / "golden.dkf1")
    exact = len(records) == len(expected) and all(
        t == ref["t"]
        and list(v.shape) == ref["shape"]
        and v.ravel().tolist() == ref["values"]
        for (t, v), ref in zip(records, expected)
    )

    rendered = 0
    for kind in KINDS:
        in_dir = data_dir / ("pair" if kind == "contraction" else "run")
        spec = FigureSpec(
            kind=kind,
            in_dir=str(in_dir),
            out_path=str(tmp_path / f"{kind}.png"),
            in_dir2=str(data_dir / "part") if kind == "compare" else None,
        )
        if render(spec).read_bytes().startswith(PNG_HEADER):
            rendered += 1

    ok = exact and rendered == len(KINDS)
    print(
        f"[plots] {'PASS' if ok else 'FAIL'}: golden container read "
        f"bit-exactly ({len(records)} records) and {rendered}/{len(KINDS)} "
        f"figure kinds rendered",
        flush=True,
    )
    assert ok
