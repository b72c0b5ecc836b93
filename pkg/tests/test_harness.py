import json
from pathlib import Path

import numpy as np
import pytest

from dklab.harness.config import (
    CouplingConfig,
    RunConfig,
    config_hash,
    initial_profile,
)
from dklab.harness.io import (
    FormatError,
    read_diagnostics_csv,
    read_fields,
    read_metadata,
    write_diagnostics_csv,
    write_fields,
    write_metadata,
)
from dklab.harness.run import (
    _execute_many,
    contraction_experiment,
    ensemble,
    heat_benchmark,
    particle_experiment,
    run,
)
from dklab.harness.cli import main
from dklab.grid import build_grid
from dklab.solver import ConfigurationError


def base_doc(**over):
    doc = {
        "schema": 1,
        "grid": {"extents": [1.0], "cells": [16]},
        "coefficients": {"preset": "identity"},
        "noise": {"pairs": [[0.3, [1]]]},
        "solver": {"dt": 1e-4, "T": 2e-3, "theta": 0.5, "n": 4, "record_every": 10},
        "initial": {"profile": "constant", "params": {"c": 1.0}},
        "ensemble": 2,
        "seed": 11,
    }
    doc.update(over)
    return doc


# ----------------------------------------------------------------- config


def test_config_builds_and_validates():
    cfg = RunConfig(base_doc())
    assert cfg.grid.cells == (16,)
    assert cfg.params.theta == 0.5
    assert cfg.noise.xi1 == pytest.approx(0.09)
    assert cfg.realizations == 2 and cfg.seed == 11
    np.testing.assert_array_equal(cfg.rho0, np.ones(16))


def test_config_hash_ignores_key_order():
    a = base_doc()
    b = dict(reversed(list(a.items())))
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(base_doc(seed=12))


def test_config_rejects_bad_documents():
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(schema=99))
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(solver={"dt": 1.0, "T": 1.0}))  # over stability bound
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(ensemble=0))
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(coefficients={"preset": "nope"}))
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(initial={"profile": "spike"}))
    with pytest.raises(ConfigurationError):
        RunConfig(base_doc(grid={"extents": [1.0]}))


def test_profiles_shapes_and_positivity():
    grid = build_grid([1.0], [64])
    flat = initial_profile(grid, {"profile": "constant", "params": {"c": 0.7}})
    np.testing.assert_array_equal(flat, np.full(64, 0.7))

    bump = initial_profile(grid, {"profile": "bump"})
    assert bump.min() >= 0.5 - 1e-12 and bump.max() > 0.9

    two = initial_profile(grid, {"profile": "two-bumps", "params": {"mean": 1.0}})
    assert two.mean() == pytest.approx(1.0)
    assert two.min() > 0

    plat = initial_profile(
        grid, {"profile": "plateau", "params": {"floor": 1e-30, "width": 0.02}}
    )
    assert plat.min() >= 1e-30  # strictly positive off-plateau value
    assert plat.min() < 1e-6  # and there really is a near-zero region
    assert plat.max() > 0.9

    with pytest.raises(ConfigurationError):
        initial_profile(grid, {"profile": "bump", "params": {"oops": 1}})
    with pytest.raises(ConfigurationError):
        initial_profile(grid, {"profile": "bump", "params": {"base": 0.1, "amp": -5.0}})


def test_profile_2d_plateau_and_bump():
    grid = build_grid([1.0, 1.0], [16, 16])
    for spec in ({"profile": "bump"}, {"profile": "plateau"},
                 {"profile": "two-bumps"}):
        vals = initial_profile(grid, spec)
        assert vals.shape == (16, 16)
        assert vals.min() >= 0


def test_coupling_config_requirements():
    doc = base_doc(initial2={"profile": "bump"}, slack=0.05)
    coupling = CouplingConfig(RunConfig(doc))
    assert coupling.slack == 0.05
    assert coupling.rho0_second.shape == (16,)
    with pytest.raises(ConfigurationError):
        CouplingConfig(RunConfig(base_doc()))
    with pytest.raises(ConfigurationError):
        CouplingConfig(RunConfig(base_doc(initial2={"profile": "bump"},
                                          shared_noise=False)))


# --------------------------------------------------------------------- io


def test_dkf1_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    fields = [
        rng.normal(size=(7,)) * 10.0 ** rng.integers(-300, 300, size=7),
        np.array([0.0, -0.0, 5e-324, 1e308, -1e-308, 1.0, np.pi]),
    ]
    times = [0.0, 0.125]
    path = tmp_path / "a.dkf1"
    write_fields(path, times, fields)
    back = read_fields(path)
    assert len(back) == 2
    for (t, v), t0, v0 in zip(back, times, fields):
        assert t == t0
        assert np.array_equal(v, v0, equal_nan=True)
        assert v.dtype == np.float64


def test_dkf1_2d_and_rewrite_identical_bytes(tmp_path):
    f = np.arange(12.0).reshape(3, 4)
    p1, p2 = tmp_path / "x.dkf1", tmp_path / "y.dkf1"
    write_fields(p1, [0.5], [f])
    write_fields(p2, [0.5], [f])
    assert p1.read_bytes() == p2.read_bytes()
    t, v = read_fields(p1)[0]
    assert v.shape == (3, 4)
    np.testing.assert_array_equal(v, f)


def test_dkf1_corruption_detected(tmp_path):
    path = tmp_path / "bad.dkf1"
    write_fields(path, [0.0], [np.ones(4)])
    raw = path.read_bytes()
    (tmp_path / "trunc.dkf1").write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="truncated"):
        read_fields(tmp_path / "trunc.dkf1")
    (tmp_path / "magic.dkf1").write_bytes(b"XKF1" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_fields(tmp_path / "magic.dkf1")


def test_csv_round_trip_exact_floats(tmp_path):
    rows = [
        {"t": 0.0, "mass": 1.0 / 3.0, "x": 1e-17},
        {"t": 0.1, "mass": np.pi, "x": -2.5e300},
    ]
    path = tmp_path / "d.csv"
    write_diagnostics_csv(path, rows)
    cols = read_diagnostics_csv(path)
    assert cols["mass"][0] == 1.0 / 3.0
    assert cols["mass"][1] == np.pi
    assert cols["x"][1] == -2.5e300
    assert list(cols) == ["t", "mass", "x"]


def test_metadata_round_trip_and_hash(tmp_path):
    doc = base_doc()
    p = tmp_path / "m.json"
    write_metadata(p, doc, extra={"status": "complete"})
    meta = read_metadata(p)
    assert meta["config"] == json.loads(json.dumps(doc))
    assert meta["config_hash"] == config_hash(doc)
    assert meta["seed"] == 11
    assert meta["status"] == "complete"
    write_metadata(tmp_path / "m2.json", doc, extra={"status": "complete"})
    assert p.read_bytes() == (tmp_path / "m2.json").read_bytes()


# -------------------------------------------------------------------- run


def test_run_writes_artifacts_and_is_bitwise_reproducible(tmp_path):
    cfg = RunConfig(base_doc())
    run(cfg, tmp_path / "one")
    run(cfg, tmp_path / "two")
    names = ["fields_r0000.dkf1", "fields_r0001.dkf1",
             "diagnostics_r0000.csv", "diagnostics_r0001.csv", "metadata.json"]
    for name in names:
        a, b = tmp_path / "one" / name, tmp_path / "two" / name
        assert a.exists()
        assert a.read_bytes() == b.read_bytes()
    # distinct streams produce distinct trajectories
    f0 = read_fields(tmp_path / "one" / "fields_r0000.dkf1")
    f1 = read_fields(tmp_path / "one" / "fields_r0001.dkf1")
    assert not np.array_equal(f0[-1][1], f1[-1][1])
    meta = read_metadata(tmp_path / "one" / "metadata.json")
    assert meta["status"] == "complete"


def test_run_zero_horizon_initial_snapshot_only(tmp_path):
    cfg = RunConfig(base_doc(solver={"dt": 1e-4, "T": 0.0}, ensemble=1))
    run(cfg, tmp_path)
    records = read_fields(tmp_path / "fields_r0000.dkf1")
    assert len(records) == 1
    assert records[0][0] == 0.0
    np.testing.assert_array_equal(records[0][1], np.ones(16))


def test_ensemble_single_realization_equals_record():
    cfg = RunConfig(base_doc(ensemble=1))
    stats = ensemble(cfg)
    assert stats.n_ok == 1 and not stats.failures
    assert (stats.columns["mass"]["var"] == 0).all()
    assert stats.columns["mass"]["mean"][0] == pytest.approx(1.0, abs=1e-13)


def test_ensemble_mass_se_zero_across_realizations():
    cfg = RunConfig(base_doc(ensemble=3))
    stats = ensemble(cfg)
    assert stats.n_ok == 3
    np.testing.assert_allclose(stats.columns["mass"]["se"], 0.0, atol=1e-13)
    # stochastic columns genuinely vary
    assert stats.columns["l2_sq"]["var"][-1] > 0


def test_ensemble_isolates_worker_failure(tmp_path):
    from dklab.harness.run import _execute_one

    def flaky(doc, r):
        if r == 2:
            raise RuntimeError("injected fault")
        return _execute_one(doc, r)

    cfg = RunConfig(base_doc(ensemble=4))
    stats = ensemble(cfg, runner=flaky, out_dir=tmp_path)
    assert stats.n_ok == 3
    assert stats.failures == [(2, "RuntimeError: injected fault")]
    meta = read_metadata(tmp_path / "metadata.json")
    assert meta["failed"] == [2]
    assert meta["aggregated"] == 3


def test_execute_many_order_independent():
    doc = base_doc(ensemble=3)
    fwd, _ = _execute_many(doc, [0, 1, 2])
    rev, _ = _execute_many(doc, [2, 1, 0])
    for r in (0, 1, 2):
        np.testing.assert_array_equal(fwd[r][1][-1], rev[r][1][-1])


def test_contraction_identical_data_is_exactly_zero(tmp_path):
    doc = base_doc(initial2={"profile": "constant", "params": {"c": 1.0}},
                   ensemble=3)
    result = contraction_experiment(CouplingConfig(RunConfig(doc)),
                                    out_dir=tmp_path)
    assert np.array_equal(result.distances, np.zeros_like(result.distances))
    assert result.pass_flags.all()
    assert result.verdict == "PASS"
    cols = read_diagnostics_csv(tmp_path / "contraction.csv")
    assert (cols["d_r0000"] == 0).all()


def test_contraction_reports_distance_series():
    doc = base_doc(initial2={"profile": "bump", "params": {"mean": 1.0}},
                   ensemble=2)
    result = contraction_experiment(CouplingConfig(RunConfig(doc)))
    assert result.distances.shape[0] == 2
    assert (result.distances[:, 0] > 0).all()
    assert np.isfinite(result.ratios).all()
    assert result.theta == 0.5


def test_particle_experiment_and_persistence(tmp_path):
    doc = base_doc(ensemble=2,
                   particles={"n": 50, "dt": 1e-3, "T": 5e-3, "bandwidth": 0.1})
    runs = particle_experiment(RunConfig(doc), out_dir=tmp_path)
    assert len(runs) == 2
    dens = read_fields(tmp_path / "particle_density_r0000.dkf1")
    assert dens[0][1].shape == (16,)
    assert dens[0][1].sum() * (1.0 / 16.0) == pytest.approx(1.0, abs=1e-12)
    pos = read_fields(tmp_path / "particle_positions_r0001.dkf1")
    assert pos[0][1].shape == (50, 1)
    with pytest.raises(ValueError, match="particles"):
        particle_experiment(RunConfig(base_doc()))


def test_heat_benchmark_small_grids():
    result = heat_benchmark(cells=(16, 32))
    assert result["orders"][0] >= 1.8
    assert result["errors"][1] < result["errors"][0]


# -------------------------------------------------------------------- cli


def write_config(tmp_path, doc, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_simulate_and_diagnose_round_trip(tmp_path):
    cfg_path = write_config(tmp_path, base_doc(ensemble=1))
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg_path, "--out", out]) == 0
    assert (Path(out) / "fields_r0000.dkf1").exists()

    assert main(["diagnose", "--in", out]) == 0
    stored = read_diagnostics_csv(Path(out) / "diagnostics_r0000.csv")
    redone = read_diagnostics_csv(Path(out) / "diagnose_r0000.csv")
    for col in ("t", "mass", "l2_sq", "entropy", "hminus1_sq", "dissipation"):
        np.testing.assert_array_equal(stored[col], redone[col])


def test_cli_seed_override_changes_output(tmp_path):
    cfg_path = write_config(tmp_path, base_doc(ensemble=1))
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg_path, "--out", a]) == 0
    assert main(["simulate", "--config", cfg_path, "--out", b, "--seed", "99"]) == 0
    fa = read_fields(Path(a) / "fields_r0000.dkf1")[-1][1]
    fb = read_fields(Path(b) / "fields_r0000.dkf1")[-1][1]
    assert not np.array_equal(fa, fb)


def test_cli_couple_and_bench(tmp_path, capsys):
    doc = base_doc(initial2={"profile": "constant", "params": {"c": 1.0}},
                   ensemble=2)
    cfg_path = write_config(tmp_path, doc)
    assert main(["couple", "--config", cfg_path, "--out", str(tmp_path / "c")]) == 0
    assert "PASS" in capsys.readouterr().out

    assert main(["bench", "--cells", "16,32", "--out", str(tmp_path / "bench")]) == 0
    out = capsys.readouterr().out
    assert "order(16->32)" in out
    assert (tmp_path / "bench" / "bench.json").exists()


def test_cli_particles(tmp_path):
    doc = base_doc(ensemble=1,
                   particles={"n": 20, "dt": 1e-3, "T": 2e-3, "bandwidth": 0.1})
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "p")
    assert main(["particles", "--config", cfg_path, "--out", out]) == 0
    assert (Path(out) / "particle_density_r0000.dkf1").exists()


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err
    bad = write_config(tmp_path, base_doc(solver={"dt": 10.0, "T": 10.0}))
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x")]) == 1


def test_cli_threads_smoke(tmp_path):
    cfg_path = write_config(tmp_path, base_doc(ensemble=2))
    a = str(tmp_path / "serial")
    b = str(tmp_path / "parallel")
    assert main(["simulate", "--config", cfg_path, "--out", a]) == 0
    assert main(["simulate", "--config", cfg_path, "--out", b, "--threads", "2"]) == 0
    for name in ("fields_r0000.dkf1", "fields_r0001.dkf1", "metadata.json"):
        assert (Path(a) / name).read_bytes() == (Path(b) / name).read_bytes()
