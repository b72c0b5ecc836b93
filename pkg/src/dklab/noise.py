"""Spatially correlated conservative noise xi(x,t) = sum_k f_k(x) B_k(t).

Modes come in cos/sin pairs at integer wavevectors, so the quadratic
variation density <xi>_1 = sum_k f_k^2 is spatially constant by the
cos^2 + sin^2 identity.  Brownian increments are drawn from counter-based
(Philox) streams: a draw depends only on (seed, stream id, step index),
never on sampling history, so ensemble members parallelize freely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet, RegularizedSqrt
from .grid import Grid

#: max tolerated deviation of sum f_k^2 from constancy before construction fails
CONSTANCY_HARD = 1e-9
#: deviation verified during construction (roundoff budget)
CONSTANCY_SOFT = 1e-12


class NoiseConstructionError(ValueError):
    """The requested mode basis violates the constant quadratic variation assumption."""


@dataclass(frozen=True)
class NoiseSpec:
    """Mode pairs (alpha_j, kappa_j); pair j expands to
    f = alpha cos(2 pi kappa.x/L) and alpha sin(2 pi kappa.x/L)."""

    modes: tuple[tuple[float, tuple[int, ...]], ...]

    @staticmethod
    def of(pairs, dim: int) -> "NoiseSpec":
        norm = []
        for alpha, kvec in pairs:
            alpha = float(alpha)
            kvec = tuple(int(k) for k in np.atleast_1d(kvec))
            if alpha < 0:
                raise ValueError(f"mode amplitude must be >= 0, got {alpha}")
            if len(kvec) != dim:
                raise ValueError(f"wavevector {kvec} does not match dimension {dim}")
            norm.append((alpha, kvec))
        return NoiseSpec(tuple(norm))

    @property
    def n_pairs(self) -> int:
        return len(self.modes)

    @property
    def n_modes(self) -> int:
        return 2 * len(self.modes)

    @property
    def xi1(self) -> float:
        return float(sum(alpha**2 for alpha, _ in self.modes))


def _mode_tables(spec: NoiseSpec, X: np.ndarray, extents) -> tuple[np.ndarray, np.ndarray]:
    """f_k and grad f_k at points X (..., d) -> (K, ...), (K, d, ...)."""
    L = np.asarray(extents, float)
    d = X.shape[-1]
    base = X.shape[:-1]
    K = spec.n_modes
    f = np.zeros((K,) + base)
    gf = np.zeros((K, d) + base)
    for j, (alpha, kvec) in enumerate(spec.modes):
        kv = 2.0 * np.pi * np.asarray(kvec, float) / L
        phase = np.tensordot(X, kv, axes=([-1], [0]))
        c, s = np.cos(phase), np.sin(phase)
        f[2 * j] = alpha * c
        f[2 * j + 1] = alpha * s
        for i in range(d):
            gf[2 * j, i] = -alpha * kv[i] * s
            gf[2 * j + 1, i] = alpha * kv[i] * c
    return f, gf


class NoiseField:
    """Grid-sampled noise tables bound to a coefficient set.

    Attributes:
      xi1: scalar <xi>_1 = sum alpha^2.
      f_faces[ax]: (K, *face_shape) mode values at interior faces.
      st_grad_f_faces[ax]: (K, d, *face_shape) values of s^t grad f_k.
      flux_tensor[ax]: (K, d, *face_shape); contraction with increments
        (K, d) gives the face-normal component of sum_k f_k s dB_k.
      div_s_xi1_cells: the field <div(s xi)>_1; sup reported separately.
    """

    def __init__(self, spec: NoiseSpec, grid: Grid, coeffs: CoefficientSet):
        self.spec = spec
        self.grid = grid
        self.xi1 = spec.xi1
        if spec.n_pairs == 0:
            warnings.warn(
                "empty noise spec: <xi>_1 = 0; running in deterministic mode",
                stacklevel=3,
            )
        d = grid.dim

        dev = 0.0
        Xc = np.stack(grid.cell_centers(), axis=-1)
        f_c, gf_c = _mode_tables(spec, Xc, grid.extents)
        if spec.n_modes:
            dev = max(dev, float(np.abs((f_c**2).sum(axis=0) - self.xi1).max()))

        self.f_faces, self.st_grad_f_faces, self.flux_tensor = [], [], []
        for ax in range(d):
            Xf = np.stack(grid.face_centers(ax), axis=-1)
            f, gf = _mode_tables(spec, Xf, grid.extents)
            if spec.n_modes:
                dev = max(dev, float(np.abs((f**2).sum(axis=0) - self.xi1).max()))
            sf = coeffs.s_faces[ax]  # (*face_shape, d, d)
            # (s^t grad f)_j = s_ij g_i
            stgf = np.einsum("...ij,ki...->kj...", sf, gf)
            # normal flux weight: f_k * s_{ax j} at the face
            tensor = f[:, None] * np.moveaxis(sf[..., ax, :], -1, 0)[None]
            self.f_faces.append(f)
            self.st_grad_f_faces.append(stgf)
            self.flux_tensor.append(np.ascontiguousarray(tensor))

        self.constancy_dev = dev
        if dev > CONSTANCY_HARD:
            raise NoiseConstructionError(
                f"sum f_k^2 deviates from {self.xi1} by {dev:g} (> {CONSTANCY_HARD:g})"
            )

        # <div(s xi)>_1 = sum_k |s^t grad f_k|^2 + f_k^2 |div s^t|^2 at cells
        stgf_c = np.einsum("...ij,ki...->kj...", coeffs.s_cells, gf_c)
        div_st = coeffs.div_s_t_cells  # (*cells, d)
        self.div_s_xi1_cells = (stgf_c**2).sum(axis=(0, 1)) + (f_c**2).sum(axis=0) * (
            div_st**2
        ).sum(axis=-1)
        self.sup_div_s_xi1 = float(self.div_s_xi1_cells.max()) if spec.n_modes else 0.0

    def face_noise(self, dB: np.ndarray) -> list[np.ndarray]:
        """Per-axis face-normal values of sum_k f_k (s dB_k)."""
        if self.spec.n_modes == 0:
            return [np.zeros(self.grid.face_shape(ax)) for ax in range(self.grid.dim)]
        return [
            np.einsum("kd...,kd->...", T, dB, optimize=True) for T in self.flux_tensor
        ]


def build_noise(spec: NoiseSpec, grid: Grid, coeffs: CoefficientSet) -> NoiseField:
    return NoiseField(spec, grid, coeffs)


# --------------------------------------------------------------------------
# reproducible counter-based increments


class RngStream:
    """Counter-based normal source: draws depend only on (seed, stream, step)."""

    def __init__(self, seed: int, stream_id: int):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._key = np.array([self.seed & (2**64 - 1), self.stream_id & (2**64 - 1)],
                             dtype=np.uint64)

    def normals(self, step_index: int, shape) -> np.ndarray:
        bitgen = np.random.Philox(
            key=self._key, counter=np.array([0, 0, 0, step_index], dtype=np.uint64)
        )
        return np.random.Generator(bitgen).standard_normal(shape)

    def uniforms(self, step_index: int, shape) -> np.ndarray:
        bitgen = np.random.Philox(
            key=self._key, counter=np.array([0, 0, 0, step_index], dtype=np.uint64)
        )
        return np.random.Generator(bitgen).random(shape)


def make_stream(seed: int, realization: int = 0) -> RngStream:
    return RngStream(seed, realization)


@dataclass(frozen=True)
class NoiseIncrement:
    dt: float
    dB: np.ndarray  # (n_modes, dim), variance dt per component
    stream_id: int
    step_index: int


def sample_increments(
    field: NoiseField, dt: float, stream: RngStream, step_index: int = 0
) -> NoiseIncrement:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    shape = (field.spec.n_modes, field.grid.dim)
    dB = np.sqrt(dt) * stream.normals(step_index, shape)
    return NoiseIncrement(dt=dt, dB=dB, stream_id=stream.stream_id, step_index=step_index)


def stochastic_face_flux(
    rho: np.ndarray, rs: RegularizedSqrt, field: NoiseField, inc: NoiseIncrement
) -> list[np.ndarray]:
    """Face flux sigma_n(rho_face) sum_k f_k (s dB_k) . normal, with rho_face
    the arithmetic mean of the adjacent cells clamped at 0 (Ito point:
    start-of-step density).  Boundary faces are identically zero and are
    not represented."""
    g = field.grid
    z = field.face_noise(inc.dB)
    out = []
    for ax in range(g.dim):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        rho_face = np.maximum(0.5 * (rho[tuple(lo)] + rho[tuple(hi)]), 0.0)
        out.append(rs.sigma(rho_face) * z[ax])
    return out
