"""Independent reflecting diffusions with generator div(a grad .).

The Ito form matching that generator is

    dX = (div a)(X) dt + sqrt(2) s(X) dB,     a = s s^t,

with mirror reflection at the box walls.  The drift comes from the analytic
derivative callbacks of the coefficient set, not from finite differences, so
the generator is exact and the particle/field comparison carries no
differentiation error.  Mollified empirical densities use a Gaussian kernel
folded reflectively at the walls and renormalized to unit mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet
from .grid import Grid
from .noise import RngStream

#: counter block reserved for drawing initial positions, far above any
#: realistic step index
INIT_DRAW_STEP = 2**62


@dataclass
class ParticleEnsemble:
    positions: np.ndarray  # (N, d), inside the closed box
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, float))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def reflect_into_box(points: np.ndarray, extents) -> np.ndarray:
    """Mirror-fold arbitrary points into [0, L] per axis.

    The reflection group has period 2L: fold modulo 2L, then flip the upper
    half.  One pass handles displacements of any size.
    """
    L = np.asarray(extents, float)
    y = np.mod(points, 2.0 * L)
    return np.where(y > L, 2.0 * L - y, y)


def sample_uniform(n: int, grid: Grid, stream: RngStream) -> ParticleEnsemble:
    u = stream.uniforms(INIT_DRAW_STEP, (n, grid.dim))
    return ParticleEnsemble(u * np.asarray(grid.extents, float))


def step_particles(
    ens: ParticleEnsemble,
    dt: float,
    coeffs: CoefficientSet,
    stream: RngStream,
    step_index: int | None = None,
) -> ParticleEnsemble:
    """One Euler-Maruyama step with mirror reflection."""
    if step_index is None:
        step_index = int(round(ens.t / dt))
    X = ens.positions
    drift = coeffs.div_a_at(X)
    s = coeffs.s_at(X)
    dB = np.sqrt(dt) * stream.normals(step_index, X.shape)
    move = drift * dt + np.sqrt(2.0) * np.einsum("nij,nj->ni", s, dB)
    new = reflect_into_box(X + move, coeffs.grid.extents)
    return ParticleEnsemble(new, ens.t + dt)


def empirical_density(ens: ParticleEnsemble, bandwidth: float, grid: Grid) -> np.ndarray:
    """Gaussian kernel estimate on cell centers, reflectively folded at the
    walls and renormalized so the cell integral is 1."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if ens.dim != grid.dim:
        raise ValueError("ensemble and grid dimensions differ")
    axis_weights = []
    for ax in range(grid.dim):
        L = grid.extents[ax]
        c = (np.arange(grid.cells[ax]) + 0.5) * grid.spacing[ax]
        p = ens.positions[:, ax]
        # images of p under the reflection group: 2mL + p and 2mL - p
        reach = 8.0 * bandwidth + L
        M = int(np.ceil(reach / (2.0 * L)))
        w = np.zeros((c.size, ens.n))
        for m in range(-M, M + 1):
            for img in (2.0 * m * L + p, 2.0 * m * L - p):
                w += np.exp(-0.5 * ((c[:, None] - img[None, :]) / bandwidth) ** 2)
        axis_weights.append(w)
    if grid.dim == 1:
        field = axis_weights[0].sum(axis=1)
    else:
        field = np.einsum("xn,yn->xy", axis_weights[0], axis_weights[1])
    total = field.sum() * grid.cell_volume
    if total <= 0.0:
        raise ValueError("kernel mass vanished; bandwidth far too small for the grid")
    return field / total


@dataclass(frozen=True)
class ParticleRun:
    grid: Grid
    times: list
    densities: list
    final: ParticleEnsemble


def run_particles(
    n: int,
    coeffs: CoefficientSet,
    T: float,
    dt: float,
    stream: RngStream,
    bandwidth: float,
    record_every: int = 1,
    init: ParticleEnsemble | None = None,
) -> ParticleRun:
    grid = coeffs.grid
    ens = sample_uniform(n, grid, stream) if init is None else init
    times = [0.0]
    densities = [empirical_density(ens, bandwidth, grid)]
    n_steps = int(round(T / dt))
    for k in range(n_steps):
        ens = step_particles(ens, dt, coeffs, stream, step_index=k)
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            times.append((k + 1) * dt)
            densities.append(empirical_density(ens, bandwidth, grid))
    return ParticleRun(grid, times, densities, ens)


@dataclass(frozen=True)
class ComparisonReport:
    times: np.ndarray
    mean_distance: np.ndarray  # L2 distance of ensemble-mean densities
    fluct_ratio: np.ndarray  # SPDE/particle ensemble fluctuation variance
    mean_tol: float
    ratio_band: tuple

    @property
    def mean_ok(self) -> bool:
        return bool(self.mean_distance.max() <= self.mean_tol)

    @property
    def ratio_ok(self) -> bool:
        finite = self.fluct_ratio[np.isfinite(self.fluct_ratio)]
        lo, hi = self.ratio_band
        return bool(((finite >= lo) & (finite <= hi)).all())

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.ratio_ok


def _match_times(t_spde, t_part):
    pairs = []
    t_spde = np.asarray(t_spde, float)
    for j, t in enumerate(t_part):
        hits = np.nonzero(np.isclose(t_spde, t, rtol=1e-9, atol=1e-12))[0]
        if hits.size:
            pairs.append((int(hits[0]), j))
    return pairs


def compare_stats(
    spde_runs,
    particle_runs,
    mean_tol: float = 0.1,
    ratio_band: tuple = (0.0, np.inf),
) -> ComparisonReport:
    """Ensemble-mean L2 distances and fluctuation-variance ratios at shared
    sample times.  Runs must cover the same horizon."""
    if not spde_runs or not particle_runs:
        raise ValueError("need at least one run on each side")
    t_end_s = spde_runs[0].times[-1]
    t_end_p = particle_runs[0].times[-1]
    if not np.isclose(t_end_s, t_end_p, rtol=1e-9, atol=1e-12):
        raise ValueError(f"mismatched horizons: {t_end_s} vs {t_end_p}")
    pairs = _match_times(spde_runs[0].times, particle_runs[0].times)
    if not pairs:
        raise ValueError("no common sample times")

    grid = particle_runs[0].grid
    V = grid.cell_volume
    times, dists, ratios = [], [], []
    for i, j in pairs:
        fs = np.stack([np.asarray(r.fields[i]) for r in spde_runs])
        fp = np.stack([np.asarray(r.densities[j]) for r in particle_runs])
        ms, mp = fs.mean(axis=0), fp.mean(axis=0)
        dists.append(np.sqrt(float(((ms - mp) ** 2).sum()) * V))
        var_s = float(((fs - ms) ** 2).sum(axis=tuple(range(1, fs.ndim))).mean()) * V
        var_p = float(((fp - mp) ** 2).sum(axis=tuple(range(1, fp.ndim))).mean()) * V
        ratios.append(var_s / var_p if var_p > 0 else np.nan)
        times.append(particle_runs[0].times[j])
    return ComparisonReport(
        np.asarray(times), np.asarray(dists), np.asarray(ratios), mean_tol, ratio_band
    )
