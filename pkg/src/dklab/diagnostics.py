"""Functionals recorded along trajectories: mass, L2, entropy, a-weighted
H^-1, log-integrability, dissipation, kinetic band masses, the time-averaged
regularized field, and Holder-in-time quotients.

Quadrature conventions: midpoint rule on cells, two-point differences on
interior faces.  Quadratic forms in the gradient use the face-normal
component of a (exact for diagonal coefficient presets; the shear preset's
off-diagonal contribution is excluded here by design, while the time stepper
carries it in full).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientSet, RegularizedSqrt
from .grid import Grid, NeumannPoisson, grad_values
from .noise import NoiseField

#: cells at exactly zero contribute |log LOG_FLOOR| instead of infinity
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    l2_sq: float
    entropy: float
    hminus1_sq: float
    log_int: float
    mass_large: float
    dissipation: float
    clipped_mass: float
    boundary_min: float
    q_bands: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {
            "t": self.t,
            "mass": self.mass,
            "l2_sq": self.l2_sq,
            "entropy": self.entropy,
            "hminus1_sq": self.hminus1_sq,
            "log_int": self.log_int,
            "mass_large": self.mass_large,
            "dissipation": self.dissipation,
            "clipped_mass": self.clipped_mass,
            "boundary_min": self.boundary_min,
        }
        for (lo, hi), v in self.q_bands.items():
            row[f"qband_{lo:g}_{hi:g}"] = v
        return row


@dataclass
class TimeAveragedField:
    t: float
    values: np.ndarray
    h1_seminorm: float


class DiagnosticsContext:
    """Caches the factorized elliptic solve and face tables for a run."""

    def __init__(self, grid: Grid, coeffs: CoefficientSet, rs: RegularizedSqrt,
                 noise: NoiseField | None = None):
        self.grid = grid
        self.coeffs = coeffs
        self.rs = rs
        self.noise = noise
        self.poisson = NeumannPoisson(grid, coeffs.a_normal_faces)


def _face_means(grid: Grid, values: np.ndarray, ax: int) -> np.ndarray:
    lo = [slice(None)] * grid.dim
    hi = [slice(None)] * grid.dim
    lo[ax] = slice(None, -1)
    hi[ax] = slice(1, None)
    return np.maximum(0.5 * (values[tuple(lo)] + values[tuple(hi)]), 0.0)


def dissipation(grid: Grid, coeffs: CoefficientSet, values: np.ndarray) -> float:
    """Face quadratic form sum_f a_nn grad(rho)^2 * V."""
    total = 0.0
    for ax, g in enumerate(grad_values(grid, values)):
        total += float(np.sum(coeffs.a_normal_faces[ax] * g * g))
    return total * grid.cell_volume

def h_minus1(
    values: np.ndarray,
    coeffs: CoefficientSet,
    reference_mean: float | None = None,
    solver: NeumannPoisson | None = None,
) -> float:
    """Squared a-weighted H^-1 norm of rho - reference_mean:
    int z (rho - m) with -div(a grad z) = rho - m, zero-flux, zero-mean z."""
    grid = coeffs.grid
    values = np.asarray(values, float)
    if reference_mean is None:
        reference_mean = float(values.mean())
    r = values - reference_mean
    # the subtraction leaves a roundoff mean proportional to |values|, which
    # can exceed the solver's slack (relative to ||r||) when the fluctuation
    # is small against the background; strip it, but only at roundoff scale
    # so a genuinely wrong reference mean still gets rejected downstream
    scale = max(float(np.abs(values).max(initial=0.0)), abs(reference_mean))
    if abs(r.mean()) <= 64.0 * np.finfo(float).eps * scale:
        r = r - r.mean()
    if solver is None:
        solver = NeumannPoisson(grid, coeffs.a_normal_faces)
    z = solver.solve(r)
    return float(np.sum(z * r) * grid.cell_volume)


def boundary_layer_min(grid: Grid, values: np.ndarray) -> float:
    """Minimum over the first layer of cells adjacent to the boundary.

    The continuum boundary trace has no finite-volume analogue; this is the
    monitored surrogate."""
    m = np.inf
    for ax in range(grid.dim):
        first = [slice(None)] * grid.dim
        last = [slice(None)] * grid.dim
        first[ax] = 0
        last[ax] = -1
        m = min(m, float(values[tuple(first)].min()), float(values[tuple(last)].min()))
    return m


def compute_record(
    state,
    coeffs: CoefficientSet,
    rs: RegularizedSqrt,
    noise: NoiseField | None = None,
    bands=None,
    *,
    reference_mean: float | None = None,
    q_band_values: dict | None = None,
    clipped_mass: float = 0.0,
    context: DiagnosticsContext | None = None,
) -> DiagnosticsRecord:
    """Record every tracked functional for a state (CellField-like or array
    plus ``t`` attribute; plain arrays get t=0)."""
    values = np.asarray(getattr(state, "values", state), float)
    t = float(getattr(state, "t", 0.0))
    grid = coeffs.grid
    V = grid.cell_volume

    solver = context.poisson if context is not None else None
    q_bands = dict(q_band_values) if q_band_values else {}
    if bands and not q_bands:
        q_bands = {(float(lo), float(hi)): 0.0 for lo, hi in bands}

    with np.errstate(divide="ignore"):
        log_small = np.abs(np.log(np.maximum(np.minimum(values, 1.0), LOG_FLOOR)))

    return DiagnosticsRecord(
        t=t,
        mass=float(values.sum() * V),
        l2_sq=float((values**2).sum() * V),
        entropy=float(np.sum(rs.Psi(values)) * V),
        hminus1_sq=h_minus1(values, coeffs, reference_mean, solver=solver),
        log_int=float(log_small.sum() * V),
        mass_large=float(np.maximum(values, 1.0).sum() * V),
        dissipation=dissipation(grid, coeffs, values),
        clipped_mass=clipped_mass,
        boundary_min=boundary_layer_min(grid, values),
        q_bands=q_bands,
    )


def band_increment(
    grid: Grid,
    coeffs: CoefficientSet,
    values: np.ndarray,
    band: tuple[float, float],
    dt: float,
) -> float:
    """One-step contribution dt * sum_f V 1_band(rho_f) phi'(rho_f) a_nn g^2."""
    lo, hi = band
    total = 0.0
    for ax, g in enumerate(grad_values(grid, values)):
        rho_f = _face_means(grid, values, ax)
        mask = (rho_f >= lo) & (rho_f <= hi)
        if mask.any():
            total += float(
                np.sum(mask * coeffs.dphi(rho_f) * coeffs.a_normal_faces[ax] * g * g)
            )
    return total * dt * grid.cell_volume


def q_band_accumulate(traj, band) -> float:
    """Accumulated band mass over a trajectory.

    Uses the stepper's running accumulation when the band was configured for
    the run; otherwise falls back to a left-endpoint sum over stored
    snapshots, which matches only when every step was stored."""
    band = (float(band[0]), float(band[1]))
    if band in getattr(traj, "q_bands", {}):
        return traj.q_bands[band]
    times, fields = traj.times, traj.fields
    if len(times) < 2:
        return 0.0
    total = 0.0
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        total += band_increment(traj.grid, traj.coeffs, fields[i], band, dt)
    return total


def time_avg_field(
    traj, coeffs: CoefficientSet, rs: RegularizedSqrt, noise: NoiseField | None
) -> list[TimeAveragedField]:
    """Trapezoidal accumulation of phi(rho) + (<xi>_1/2) Sigma_n(rho) with the
    spatial mean removed; one TimeAveragedField per stored sample."""
    xi1 = noise.xi1 if noise is not None else 0.0
    grid = traj.grid
    V = grid.cell_volume
    times = np.asarray(traj.times, float)
    out = [TimeAveragedField(float(times[0]), np.zeros(grid.cells), 0.0)]
    L = np.zeros(grid.cells)
    prev = None
    for i, t in enumerate(times):
        w = coeffs.phi(traj.fields[i]) + 0.5 * xi1 * rs.Sigma(traj.fields[i])
        w = w - w.mean()
        if i > 0:
            L = L + 0.5 * (times[i] - times[i - 1]) * (prev + w)
            L = L - L.mean()  # keep roundoff from accumulating in the mean
            sem = np.sqrt(
                sum(float(np.sum(g * g)) for g in grad_values(grid, L)) * V
            )
            out.append(TimeAveragedField(float(t), L.copy(), sem))
        prev = w
    return out


def holder_quotient(series, beta: float, norm=None) -> float:
    """max over dyadic pairs (i, i + 2^k) of ||x_j - x_i|| / (t_j - t_i)^beta.

    ``series`` is a sequence of (t, x) with x scalar or array; ``norm`` maps a
    difference to a real (default: |.| for scalars, flat 2-norm for arrays).
    """
    series = list(series)
    if len(series) < 2:
        raise ValueError("need at least two samples for a Holder quotient")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0,1), got {beta}")
    if norm is None:
        norm = lambda d: float(np.linalg.norm(np.ravel(d)))
    times = [float(t) for t, _ in series]
    xs = [x for _, x in series]
    best = 0.0
    step = 1
    n = len(series)
    while step < n:
        for i in range(0, n - step):
            j = i + step
            gap = times[j] - times[i]
            if gap <= 0:
                raise ValueError("series times must be strictly increasing")
            q = norm(np.asarray(xs[j]) - np.asarray(xs[i])) / gap**beta
            best = max(best, q)
        step *= 2
    return best
