"""Time integration of the regularized equation in conservative flux form.

Update (Euler-Maruyama on the Ito form, theta-weighted correction):

    rho' = rho + dt div(F_det) - div(F_stoch)
    F_det   = a grad phi(rho)
            + 2 theta (<xi>_1/2) [ (sigma'(rho))^2 a grad rho
                                   + sigma(rho) sigma'(rho) s(div s^t) ]
    F_stoch = sigma(rho) (s dxi)          (Ito point: start-of-step rho)

theta = 0 is the Ito equation, 1/2 Stratonovich, 1 Klimontovich.  A Heun
midpoint integrator realizes the Stratonovich law without explicit
correction terms and serves as an independent cross-check.  All fluxes live
on interior faces, so mass is conserved to roundoff before the
nonnegativity policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .coeffs import CoefficientSet, RegularizedSqrt, validate_assumptions
from .diagnostics import DiagnosticsContext, band_increment, compute_record
from .grid import Grid, div_values
from .noise import NoiseField, NoiseIncrement, RngStream


class ConfigurationError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


SCHEMES = ("ito_em", "strat_heun")
POLICIES = ("clip_renormalize", "clip_only")

#: a step is flagged under-resolved when it clips more than this fraction
#: of the pre-clip positive mass
CLIP_FLAG_FRACTION = 0.01


def stable_dt(coeffs: CoefficientSet, noise: NoiseField, theta: float, n: int) -> float:
    """Explicit-scheme bound 0.25 min(h)^2 / (Lam Lam_phi + 2 theta <xi>_1 (n/4) Lam)."""
    rep = validate_assumptions(coeffs)
    Lam = rep.Lambda_ell
    Lam_phi = coeffs.nonlinearity.Lambda_phi
    denom = Lam * Lam_phi + 2.0 * theta * noise.xi1 * (n / 4.0) * Lam
    h_min = min(coeffs.grid.spacing)
    return 0.25 * h_min**2 / denom


@dataclass
class SolverParams:
    dt: float
    T: float
    theta: float = 0.5
    scheme: str = "ito_em"
    n: int = 4
    nonneg_policy: str = "clip_renormalize"
    record_every: int = 1

    def validate(self, coeffs: CoefficientSet, noise: NoiseField) -> None:
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.T < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.T}")
        if self.theta < 0:
            raise ConfigurationError(f"theta must be >= 0, got {self.theta}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.nonneg_policy not in POLICIES:
            raise ConfigurationError(
                f"nonneg_policy must be one of {POLICIES}, got {self.nonneg_policy!r}"
            )
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        bound = stable_dt(coeffs, noise, self.theta, self.n)
        if self.dt > bound * (1.0 + 1e-12):
            raise ConfigurationError(
                f"dt = {self.dt:g} exceeds the stability bound {bound:g} "
                f"(theta={self.theta}, n={self.n}, <xi>_1={noise.xi1:g})"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class StateField:
    grid: Grid
    values: np.ndarray
    t: float = 0.0
    cumulative_clipped_mass: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != tuple(self.grid.cells):
            raise ValueError("state shape does not match grid")

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


@dataclass
class Trajectory:
    grid: Grid
    coeffs: CoefficientSet
    rs: RegularizedSqrt
    noise: NoiseField
    params: SolverParams
    stream_id: int
    times: list = dc_field(default_factory=list)
    fields: list = dc_field(default_factory=list)
    records: list = dc_field(default_factory=list)
    q_bands: dict = dc_field(default_factory=dict)
    mass_drift_max: float = 0.0
    clipped_total: float = 0.0
    clip_flags: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


def apply_nonneg(values: np.ndarray, policy: str, cell_volume: float):
    """Returns (values, clipped_mass, under_resolved_flag).

    clip_renormalize: zero the negative cells and remove the same mass from
    the positive cells in proportion to their value, so total mass is exactly
    preserved.  clip_only: zero negatives, let mass drift (recorded).
    """
    if policy not in POLICIES:
        raise ConfigurationError(f"unknown nonneg policy {policy!r}")
    neg = values < 0.0
    if not neg.any():
        return values, 0.0, False
    clipped = -float(values[neg].sum()) * cell_volume
    pos_mass = float(values[values > 0.0].sum()) * cell_volume
    out = np.maximum(values, 0.0)
    if policy == "clip_renormalize":
        if pos_mass > clipped:
            out = out * (1.0 - clipped / pos_mass)
        else:
            out = np.zeros_like(out)  # nothing left to carry the deficit
    flagged = clipped > CLIP_FLAG_FRACTION * pos_mass if pos_mass > 0 else True
    return out, clipped, flagged


def _tangential_avg(G_other: np.ndarray, ax: int) -> np.ndarray:
    """Average the other axis' face gradients onto this axis' faces (2D).
    Wall faces contribute zero (mirror ghost has no tangential gradient)."""
    other = 1 - ax
    pad = [(0, 0), (0, 0)]
    pad[other] = (1, 1)
    Gp = np.pad(G_other, pad)
    lo = [slice(None)] * 2
    hi = [slice(None)] * 2
    lo[other], hi[other] = slice(None, -1), slice(1, None)
    cell_avg = 0.5 * (Gp[tuple(lo)] + Gp[tuple(hi)])
    lo2 = [slice(None)] * 2
    hi2 = [slice(None)] * 2
    lo2[ax], hi2[ax] = slice(None, -1), slice(1, None)
    return 0.5 * (cell_avg[tuple(lo2)] + cell_avg[tuple(hi2)])


class _StepContext:
    """Precomputed tables and array kernels for one (grid, coeffs, noise) run."""

    def __init__(self, coeffs: CoefficientSet, rs: RegularizedSqrt, noise: NoiseField):
        self.grid = coeffs.grid
        self.coeffs = coeffs
        self.rs = rs
        self.noise = noise
        self.h = self.grid.spacing
        self.a_nn = coeffs.a_normal_faces
        self.w = coeffs.s_div_s_t_faces
        self.has_cross = [
            c is not None and np.any(c != 0.0) for c in coeffs.a_cross_faces
        ]
        self.a_cross = coeffs.a_cross_faces

    def faces(self, rho: np.ndarray) -> list[np.ndarray]:
        out = []
        for ax in range(self.grid.dim):
            lo = [slice(None)] * self.grid.dim
            hi = [slice(None)] * self.grid.dim
            lo[ax], hi[ax] = slice(None, -1), slice(1, None)
            out.append(np.maximum(0.5 * (rho[tuple(lo)] + rho[tuple(hi)]), 0.0))
        return out

    def _a_flux(self, grads: list[np.ndarray]) -> list[np.ndarray]:
        """Face-normal components of a*g for cellwise gradients g."""
        out = []
        for ax in range(self.grid.dim):
            F = self.a_nn[ax] * grads[ax]
            if self.has_cross[ax]:
                F = F + self.a_cross[ax] * _tangential_avg(grads[1 - ax], ax)
            out.append(F)
        return out

    def det_flux(self, rho: np.ndarray, theta_xi: float, rho_faces=None) -> list[np.ndarray]:
        phi_rho = self.coeffs.phi(rho)
        gphi = [np.diff(phi_rho, axis=ax) / self.h[ax] for ax in range(self.grid.dim)]
        F = self._a_flux(gphi)
        if theta_xi != 0.0:
            grho = [np.diff(rho, axis=ax) / self.h[ax] for ax in range(self.grid.dim)]
            Fa = self._a_flux(grho)
            rf = self.faces(rho) if rho_faces is None else rho_faces
            for ax in range(self.grid.dim):
                F[ax] = F[ax] + theta_xi * (
                    self.rs.dsig_sq(rf[ax]) * Fa[ax]
                    + self.rs.sig_dsig(rf[ax]) * self.w[ax]
                )
        return F

    def step_em(self, rho: np.ndarray, dB: np.ndarray, dt: float, theta: float) -> np.ndarray:
        rf = self.faces(rho)
        F = self.det_flux(rho, theta * self.noise.xi1, rho_faces=rf)
        z = self.noise.face_noise(dB)
        comb = [dt * F[ax] - self.rs.sigma(rf[ax]) * z[ax] for ax in range(self.grid.dim)]
        return rho + div_values(self.grid, comb)

    def step_heun(self, rho: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
        z = self.noise.face_noise(dB)
        F0 = self.det_flux(rho, 0.0)
        rf0 = self.faces(rho)
        comb0 = [dt * F0[ax] - self.rs.sigma(rf0[ax]) * z[ax] for ax in range(self.grid.dim)]
        pred = rho + div_values(self.grid, comb0)
        F1 = self.det_flux(pred, 0.0)
        rfm = self.faces(0.5 * (rho + pred))
        comb = [
            dt * 0.5 * (F0[ax] + F1[ax]) - self.rs.sigma(rfm[ax]) * z[ax]
            for ax in range(self.grid.dim)
        ]
        return rho + div_values(self.grid, comb)


def _check_finite(values: np.ndarray, t: float, step: int) -> None:
    ok = np.isfinite(values)
    if not ok.all():
        bad = int(values.size - ok.sum())
        finite = values[ok]
        lo, hi = (finite.min(), finite.max()) if finite.size else (np.nan, np.nan)
        raise NumericalFailure(
            f"non-finite state after step {step} (t={t:g}): {bad} bad cells, "
            f"finite range [{lo:g}, {hi:g}]"
        )


def step_ito(
    state: StateField,
    coeffs: CoefficientSet,
    rs: RegularizedSqrt,
    noise: NoiseField,
    inc: NoiseIncrement,
    theta: float,
    nonneg_policy: str = "clip_renormalize",
) -> StateField:
    ctx = _StepContext(coeffs, rs, noise)
    new = ctx.step_em(state.values, inc.dB, inc.dt, theta)
    _check_finite(new, state.t + inc.dt, inc.step_index)
    new, clipped, _ = apply_nonneg(new, nonneg_policy, state.grid.cell_volume)
    return StateField(
        state.grid, new, state.t + inc.dt, state.cumulative_clipped_mass + clipped
    )


def step_strat_heun(
    state: StateField,
    coeffs: CoefficientSet,
    rs: RegularizedSqrt,
    noise: NoiseField,
    inc: NoiseIncrement,
    nonneg_policy: str = "clip_renormalize",
) -> StateField:
    ctx = _StepContext(coeffs, rs, noise)
    new = ctx.step_heun(state.values, inc.dB, inc.dt)
    _check_finite(new, state.t + inc.dt, inc.step_index)
    new, clipped, _ = apply_nonneg(new, nonneg_policy, state.grid.cell_volume)
    return StateField(
        state.grid, new, state.t + inc.dt, state.cumulative_clipped_mass + clipped
    )


def run_path(
    rho0,
    params: SolverParams,
    coeffs: CoefficientSet,
    rs: RegularizedSqrt,
    noise: NoiseField,
    stream: RngStream,
    bands=None,
) -> Trajectory:
    """Advance rho0 to T, recording diagnostics every ``record_every`` steps
    (plus the initial and final states).  Deterministic given (seed, stream)."""
    grid = coeffs.grid
    values = np.asarray(getattr(rho0, "values", rho0), float).copy()
    if values.shape != tuple(grid.cells):
        raise ConfigurationError("initial state shape does not match grid")
    if values.min() < 0:
        raise ConfigurationError("initial state must be nonnegative")
    params.validate(coeffs, noise)

    ctx = _StepContext(coeffs, rs, noise)
    diag = DiagnosticsContext(grid, coeffs, rs, noise)
    band_list = [(float(lo), float(hi)) for lo, hi in bands] if bands else []
    traj = Trajectory(grid, coeffs, rs, noise, params, stream.stream_id,
                      q_bands={b: 0.0 for b in band_list})

    V = grid.cell_volume
    m0 = float(values.sum()) * V
    cum_clip = 0.0
    shape = (noise.spec.n_modes, grid.dim)
    sqrt_dt = np.sqrt(params.dt)

    def record(t: float) -> None:
        rec = compute_record(
            StateField(grid, values, t, cum_clip), coeffs, rs, noise,
            q_band_values=dict(traj.q_bands), clipped_mass=cum_clip, context=diag,
        )
        traj.times.append(t)
        traj.fields.append(values.copy())
        traj.records.append(rec)

    record(0.0)
    n_steps = params.n_steps
    use_heun = params.scheme == "strat_heun"
    for k in range(n_steps):
        for b in band_list:
            traj.q_bands[b] += band_increment(grid, coeffs, values, b, params.dt)
        dB = sqrt_dt * stream.normals(k, shape)
        if use_heun:
            values = ctx.step_heun(values, dB, params.dt)
        else:
            values = ctx.step_em(values, dB, params.dt, params.theta)
        t = (k + 1) * params.dt
        _check_finite(values, t, k)
        if m0 != 0.0:
            drift = abs(float(values.sum()) * V - m0) / abs(m0)
            traj.mass_drift_max = max(traj.mass_drift_max, drift)
        values, clipped, flagged = apply_nonneg(values, params.nonneg_policy, V)
        cum_clip += clipped
        traj.clip_flags += int(flagged)
        if (k + 1) % params.record_every == 0 or k + 1 == n_steps:
            record(t)
    traj.clipped_total = cum_clip
    return traj
