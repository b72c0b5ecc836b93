import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dklab.coeffs import CoefficientSet, make_coeffs, make_phi
from dklab.grid import build_grid
from dklab.noise import make_stream
from dklab.particles import (
    ComparisonReport,
    ParticleEnsemble,
    compare_stats,
    empirical_density,
    reflect_into_box,
    run_particles,
    sample_uniform,
    step_particles,
)


def test_reflect_hand_values():
    L = [1.0]
    assert reflect_into_box(np.array([[1.05]]), L) == pytest.approx(0.95)
    assert reflect_into_box(np.array([[2.4]]), L) == pytest.approx(0.4)
    assert reflect_into_box(np.array([[-0.3]]), L) == pytest.approx(0.3)
    assert reflect_into_box(np.array([[1.0]]), L) == pytest.approx(1.0)
    assert reflect_into_box(np.array([[0.0]]), L) == pytest.approx(0.0)
    out = reflect_into_box(np.array([[2.5, -0.7]]), [2.0, 0.5])
    np.testing.assert_allclose(out, [[1.5, 0.3]])


def _slow_fold(x, L):
    guard = 0
    while x < 0.0 or x > L:
        x = -x if x < 0.0 else 2.0 * L - x
        guard += 1
        assert guard < 10_000
    return x


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-100.0, 100.0), L=st.floats(0.3, 3.0))
def test_reflect_matches_iterated_folding(x, L):
    got = float(reflect_into_box(np.array([[x]]), [L])[0, 0])
    assert 0.0 <= got <= L
    assert got == pytest.approx(_slow_fold(x, L), abs=1e-9)


def test_reflect_box_invariant_for_huge_moves():
    rng = np.random.default_rng(0)
    pts = rng.normal(0.0, 1e9, (1000, 2))
    out = reflect_into_box(pts, [1.0, 2.5])
    assert (out[:, 0] >= 0).all() and (out[:, 0] <= 1.0).all()
    assert (out[:, 1] >= 0).all() and (out[:, 1] <= 2.5).all()


def test_step_identity_is_pure_scaled_brownian():
    grid = build_grid([1.0], [8])
    coeffs = make_coeffs(grid, "identity")
    stream = make_stream(10, 0)
    ens = ParticleEnsemble(np.linspace(0.1, 0.9, 5)[:, None])
    out = step_particles(ens, 1e-3, coeffs, stream, step_index=4)
    expected = reflect_into_box(
        ens.positions + np.sqrt(2.0) * np.sqrt(1e-3) * make_stream(10, 0).normals(4, (5, 1)),
        grid.extents,
    )
    np.testing.assert_array_equal(out.positions, expected)
    assert out.t == pytest.approx(1e-3)


class _ZeroStream:
    def normals(self, step_index, shape):
        return np.zeros(shape)


def _sine_coefficient_set(eps=0.1):
    # a(x) = 1 + eps sin(2 pi x), realized through s = sqrt(a)
    grid = build_grid([1.0], [8])

    def s_fn(X):
        X = np.asarray(X, float)
        return np.sqrt(1.0 + eps * np.sin(2.0 * np.pi * X[..., 0]))[..., None, None]

    def ds_fn(X):
        X = np.asarray(X, float)
        x = X[..., 0]
        d = eps * np.pi * np.cos(2.0 * np.pi * x) / np.sqrt(1.0 + eps * np.sin(2.0 * np.pi * x))
        return d[..., None, None, None]

    return CoefficientSet(grid, s_fn, ds_fn, make_phi("linear"))


def test_drift_is_derivative_of_a():
    eps = 0.1
    coeffs = _sine_coefficient_set(eps)
    ens = ParticleEnsemble(np.array([[0.0], [0.25], [0.5]]))
    dt = 1e-3
    out = step_particles(ens, dt, coeffs, _ZeroStream(), step_index=0)
    # a'(x) = 2 pi eps cos(2 pi x): at 0 -> 2 pi eps, at 1/4 -> 0, at 1/2 -> -2 pi eps
    drift = 2.0 * np.pi * eps * np.array([1.0, 0.0, -1.0])
    np.testing.assert_allclose(
        out.positions[:, 0], ens.positions[:, 0] + dt * drift, atol=1e-15
    )


def test_empirical_density_unit_mass():
    grid = build_grid([1.0], [32])
    ens = ParticleEnsemble(np.array([[0.37]]))
    for bw in (0.01, 0.05, 0.3):
        field = empirical_density(ens, bw, grid)
        assert field.sum() * grid.cell_volume == pytest.approx(1.0, abs=1e-13)
        assert field.min() >= 0.0
    grid2 = build_grid([1.0, 2.0], [8, 12])
    ens2 = ParticleEnsemble(np.random.default_rng(1).uniform(0, 1, (40, 2)) * [1.0, 2.0])
    f2 = empirical_density(ens2, 0.15, grid2)
    assert f2.sum() * grid2.cell_volume == pytest.approx(1.0, abs=1e-13)


def test_empirical_density_huge_bandwidth_flattens():
    grid = build_grid([1.0], [16])
    ens = ParticleEnsemble(np.array([[0.1], [0.8]]))
    field = empirical_density(ens, 50.0, grid)
    np.testing.assert_allclose(field, 1.0, rtol=1e-9)


def test_empirical_density_uniform_positions_near_flat():
    grid = build_grid([1.0], [16])
    ens = sample_uniform(4000, grid, make_stream(42, 0))
    field = empirical_density(ens, 0.05, grid)
    assert np.abs(field - 1.0).max() <= 0.15


def test_empirical_density_errors():
    grid = build_grid([1.0], [8])
    ens = ParticleEnsemble(np.array([[0.5]]))
    with pytest.raises(ValueError):
        empirical_density(ens, 0.0, grid)
    with pytest.raises(ValueError):
        empirical_density(ens, 0.1, build_grid([1.0, 1.0], [4, 4]))


def test_single_particle_marginal_uniform_ks():
    grid = build_grid([1.0], [8])
    coeffs = make_coeffs(grid, "identity")
    stream = make_stream(77, 0)
    ens = ParticleEnsemble(np.full((10_000, 1), 0.5))
    dt = 0.01
    for k in range(100):
        ens = step_particles(ens, dt, coeffs, stream, step_index=k)
    assert (ens.positions >= 0).all() and (ens.positions <= 1).all()
    ks = stats.kstest(ens.positions[:, 0], "uniform")
    assert ks.pvalue >= 0.01


def test_run_particles_deterministic_and_stream_separated():
    grid = build_grid([1.0], [16])
    coeffs = make_coeffs(grid, "identity")
    a = run_particles(200, coeffs, T=0.02, dt=1e-3, stream=make_stream(3, 1),
                      bandwidth=0.08, record_every=10)
    b = run_particles(200, coeffs, T=0.02, dt=1e-3, stream=make_stream(3, 1),
                      bandwidth=0.08, record_every=10)
    c = run_particles(200, coeffs, T=0.02, dt=1e-3, stream=make_stream(3, 2),
                      bandwidth=0.08, record_every=10)
    assert a.times == [0.0, 0.01, 0.02]
    for fa, fb in zip(a.densities, b.densities):
        np.testing.assert_array_equal(fa, fb)
    assert not np.array_equal(a.densities[-1], c.densities[-1])


class _FakeSpde:
    def __init__(self, times, fields):
        self.times, self.fields = times, fields


class _FakePart:
    def __init__(self, grid, times, densities):
        self.grid, self.times, self.densities = grid, times, densities


def _cos_fields(grid, times, rate):
    x = grid.cell_centers()[0]
    return [1.0 + np.exp(-rate * t) * np.cos(np.pi * x) for t in times]


def test_compare_stats_identical_inputs_zero_distance():
    grid = build_grid([1.0], [16])
    times = [0.0, 0.05, 0.1]
    fields = _cos_fields(grid, times, np.pi**2)
    rep = compare_stats(
        [_FakeSpde(times, fields)], [_FakePart(grid, times, fields)], mean_tol=1e-12
    )
    assert isinstance(rep, ComparisonReport)
    np.testing.assert_allclose(rep.mean_distance, 0.0, atol=1e-14)
    assert rep.mean_ok and rep.passed  # nan ratios are vacuous


def test_compare_stats_flags_doubled_diffusivity():
    grid = build_grid([1.0], [32])
    times = [0.0, 0.025, 0.05]
    good = _cos_fields(grid, times, np.pi**2)
    fast = _cos_fields(grid, times, 2.0 * np.pi**2)
    base = compare_stats(
        [_FakeSpde(times, good)], [_FakePart(grid, times, good)], mean_tol=0.1
    )
    assert base.passed
    rep = compare_stats(
        [_FakeSpde(times, good)], [_FakePart(grid, times, fast)], mean_tol=0.1
    )
    assert not rep.mean_ok and not rep.passed
    assert rep.mean_distance.max() > 0.1


def test_compare_stats_rejects_mismatched_horizons():
    grid = build_grid([1.0], [8])
    f = [np.ones(8), np.ones(8)]
    with pytest.raises(ValueError, match="horizon"):
        compare_stats(
            [_FakeSpde([0.0, 0.1], f)], [_FakePart(grid, [0.0, 0.2], f)]
        )


def test_positions_stay_inside_after_many_steps():
    grid = build_grid([1.0, 1.0], [4, 4])
    coeffs = make_coeffs(grid, "smooth-inhomogeneous", delta=0.4)
    stream = make_stream(5, 0)
    ens = sample_uniform(500, grid, stream)
    for k in range(20):
        ens = step_particles(ens, 0.02, coeffs, stream, step_index=k)
        assert (ens.positions >= 0.0).all()
        assert (ens.positions <= 1.0).all()
