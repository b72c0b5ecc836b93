"""Diffusion coefficients s, a = s s^t, the nonlinearity phi, and the
regularized square-root family sigma_n with its derived functionals.

The matrix field s is supplied as closed-form callbacks together with its
analytic first derivatives; everything sampled on a grid (faces and cells) is
precomputed at construction so the stepping loop only does table lookups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .grid import Grid


class SigmaValues(NamedTuple):
    sigma: float | np.ndarray
    dsigma: float | np.ndarray
    sig_dsig: float | np.ndarray
    dsig_sq: float | np.ndarray
    Sigma: float | np.ndarray
    Psi: float | np.ndarray


class RegularizedSqrt:
    """The family sigma_n(eta) = sqrt(eta^+ + 1/n) - sqrt(1/n), capped.

    Below eta = n the closed forms hold:

        sigma'   = 1 / (2 sqrt(eta + 1/n))
        Sigma_n  = (1/4) log((eta + 1/n) / (1 + 1/n))      (Sigma_n(1) = 0)

    On [n, n+1] the derivative is tapered to zero by a monotone cubic blend
    psi with psi(0)=1, psi(1)=0, psi'(0) matching sigma''(n)/sigma'(n) and
    psi'(1)=0, which makes sigma C^2 and constant for eta >= n+1.  All
    antiderivatives stay exact: the cap contributes polynomial integrals.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"regularization index must satisfy n >= 1, got {n}")
        self.n = n
        self.eps = 1.0 / n
        # cap setup: g(eta) = sqrt(eta+eps)-sqrt(eps), blend on [n, n+1]
        self._g_n = math.sqrt(n + self.eps) - math.sqrt(self.eps)
        self._dg_n = 0.5 / math.sqrt(n + self.eps)
        q = -0.5 / (n + self.eps)  # psi'(0) = g''(n)/g'(n)
        # psi(u) = 1 + q u + (-3-2q) u^2 + (2+q) u^3
        self._psi = np.polynomial.Polynomial([1.0, q, -3.0 - 2.0 * q, 2.0 + q])
        self._psi_int = self._psi.integ()  # for sigma on the cap
        self._psi_sq_int = (self._psi * self._psi).integ()  # for Sigma on the cap
        self.sigma_max = self._g_n + self._dg_n * float(self._psi_int(1.0))
        self._Sigma_n_at_cap = 0.25 * math.log((n + self.eps) / (1.0 + self.eps))
        self._Sigma_max = self._Sigma_n_at_cap + self._dg_n**2 * float(self._psi_sq_int(1.0))

    # -- internal piecewise evaluation -------------------------------------
    def _pieces(self, eta):
        eta = np.asarray(eta, dtype=float)
        below = eta < self.n
        above = eta > self.n + 1.0
        cap = ~below & ~above
        return eta, below, cap, above

    def sigma(self, eta):
        eta, below, cap, above = self._pieces(eta)
        pos = np.maximum(eta, 0.0)
        out = np.where(below, np.sqrt(pos + self.eps) - math.sqrt(self.eps), 0.0)
        if cap.any():
            u = np.clip(eta - self.n, 0.0, 1.0)
            out = np.where(cap, self._g_n + self._dg_n * self._psi_int(u), out)
        out = np.where(above, self.sigma_max, out)
        return out if out.ndim else float(out)

    def dsigma(self, eta):
        eta, below, cap, above = self._pieces(eta)
        pos = np.maximum(eta, 0.0)
        out = np.where(below & (eta >= 0.0), 0.5 / np.sqrt(pos + self.eps), 0.0)
        if cap.any():
            u = np.clip(eta - self.n, 0.0, 1.0)
            out = np.where(cap, self._dg_n * self._psi(u), out)
        return out if out.ndim else float(out)

    def sig_dsig(self, eta):
        """sigma * sigma'; tends to 1/2 for fixed eta > 0 as n grows."""
        out = np.asarray(self.sigma(eta)) * np.asarray(self.dsigma(eta))
        return out if out.ndim else float(out)

    def dsig_sq(self, eta):
        out = np.asarray(self.dsigma(eta)) ** 2
        return out if out.ndim else float(out)

    def Sigma(self, eta):
        """Antiderivative of (sigma')^2 normalized by Sigma(1) = 0."""
        eta, below, cap, above = self._pieces(eta)
        pos = np.maximum(eta, 0.0)
        out = np.where(
            below, 0.25 * np.log((pos + self.eps) / (1.0 + self.eps)), 0.0
        )
        if cap.any():
            u = np.clip(eta - self.n, 0.0, 1.0)
            out = np.where(cap, self._Sigma_n_at_cap + self._dg_n**2 * self._psi_sq_int(u), out)
        out = np.where(above, self._Sigma_max, out)
        return out if out.ndim else float(out)

    @staticmethod
    def Psi(eta):
        """Entropy density eta log eta - eta with Psi(0) = 0."""
        eta = np.asarray(eta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(eta > 0.0, eta * np.log(np.maximum(eta, 1e-300)) - eta, 0.0)
        return out if out.ndim else float(out)

    def Theta(self, eta, M: float):
        """Antiderivative of sigma sigma' 1_[M, M+1] with Theta(0) = 0.

        Uses the chain rule int sigma sigma' = sigma^2/2, so the value is
        (sigma(min(eta, M+1))^2 - sigma(M)^2)/2 once eta passes M.  Bounded by
        a constant independent of n and supported on {eta >= M}.
        """
        eta = np.asarray(eta, dtype=float)
        hi = np.asarray(self.sigma(np.minimum(eta, M + 1.0)))
        lo = self.sigma(M)
        out = np.where(eta >= M, 0.5 * (hi**2 - lo**2), 0.0)
        return out if out.ndim else float(out)


def make_sigma(n: int) -> RegularizedSqrt:
    if int(n) != n or n < 1:
        raise ValueError(f"regularization index must be a positive integer, got {n!r}")
    return RegularizedSqrt(int(n))


def evaluate_sigma_products(rs: RegularizedSqrt, eta) -> SigmaValues:
    """Mutually consistent sigma-family values at eta >= 0."""
    if np.any(np.asarray(eta) < 0.0):
        raise ValueError(f"eta must be nonnegative, got {eta!r}")
    return SigmaValues(
        sigma=rs.sigma(eta),
        dsigma=rs.dsigma(eta),
        sig_dsig=rs.sig_dsig(eta),
        dsig_sq=rs.dsig_sq(eta),
        Sigma=rs.Sigma(eta),
        Psi=rs.Psi(eta),
    )


# --------------------------------------------------------------------------
# nonlinearity phi


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    lambda_phi: float
    Lambda_phi: float


def make_phi(preset: str = "linear", **params) -> Nonlinearity:
    """phi presets: 'linear' (slope c) and 'sine-perturbed'
    (phi = c eta + (eps/omega)(1 - cos(omega eta)), phi' in [c-eps, c+eps])."""
    if preset == "linear":
        c = float(params.pop("c", 1.0))
        if params:
            raise ValueError(f"unknown phi params {params}")
        if c <= 0:
            raise ValueError("phi slope must be positive")
        return Nonlinearity("linear", lambda e: c * np.asarray(e, float),
                            lambda e: np.full_like(np.asarray(e, float), c), c, c)
    if preset == "sine-perturbed":
        c = float(params.pop("c", 1.0))
        eps = float(params.pop("eps", 0.25))
        omega = float(params.pop("omega", 2.0 * math.pi))
        if params:
            raise ValueError(f"unknown phi params {params}")
        if not 0.0 <= eps < c:
            raise ValueError("need 0 <= eps < c for a nondegenerate phi")

        def phi(e):
            e = np.asarray(e, float)
            return c * e + (eps / omega) * (1.0 - np.cos(omega * e))

        def dphi(e):
            e = np.asarray(e, float)
            return c + eps * np.sin(omega * e)

        return Nonlinearity("sine-perturbed", phi, dphi, c - eps, c + eps)
    raise ValueError(f"unknown phi preset {preset!r}")


# --------------------------------------------------------------------------
# matrix field s and derived tables


def _as_points(coord_arrays) -> np.ndarray:
    return np.stack(coord_arrays, axis=-1)


@dataclass
class CoefficientSet:
    """Grid-sampled coefficient tables plus the defining callbacks.

    s_fn(X) -> (..., d, d) for X of shape (..., d); ds_fn(X) -> (..., d, d, d)
    with index order [k, i, j] = d s_ij / d x_k.
    """

    grid: Grid
    s_fn: Callable
    ds_fn: Callable
    nonlinearity: Nonlinearity
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        Xc = _as_points(g.cell_centers())
        self.s_cells = np.asarray(self.s_fn(Xc), float)
        self.a_cells = np.einsum("...ik,...jk->...ij", self.s_cells, self.s_cells)
        ds = np.asarray(self.ds_fn(Xc), float)
        # (div s^t)_j = sum_k d_k s_kj
        self.div_s_t_cells = np.einsum("...kkj->...j", ds)
        self.s_div_s_t_cells = np.einsum("...ij,...j->...i", self.s_cells, self.div_s_t_cells)
        # particle drift b_j = sum_i d_i a_ij, from the product rule on s s^t
        self.div_a_cells = self._div_a(Xc, self.s_cells, ds)

        self.s_faces, self.a_faces = [], []
        self.a_normal_faces, self.a_cross_faces = [], []
        self.s_div_s_t_faces = []
        for ax in range(g.dim):
            Xf = _as_points(g.face_centers(ax))
            sf = np.asarray(self.s_fn(Xf), float)
            af = np.einsum("...ik,...jk->...ij", sf, sf)
            dsf = np.asarray(self.ds_fn(Xf), float)
            div_s_t_f = np.einsum("...kkj->...j", dsf)
            w = np.einsum("...ij,...j->...i", sf, div_s_t_f)
            self.s_faces.append(sf)
            self.a_faces.append(af)
            self.a_normal_faces.append(np.ascontiguousarray(af[..., ax, ax]))
            if g.dim == 2:
                other = 1 - ax
                self.a_cross_faces.append(np.ascontiguousarray(af[..., ax, other]))
            else:
                self.a_cross_faces.append(None)
            self.s_div_s_t_faces.append(np.ascontiguousarray(w[..., ax]))

    @staticmethod
    def _div_a(X, s, ds):
        return np.einsum("...iik,...jk->...j", ds, s) + np.einsum(
            "...ik,...ijk->...j", s, ds
        )

    # callbacks used by the particle integrator (positions off the grid)
    def s_at(self, X) -> np.ndarray:
        return np.asarray(self.s_fn(np.asarray(X, float)), float)

    def div_a_at(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        s = np.asarray(self.s_fn(X), float)
        ds = np.asarray(self.ds_fn(X), float)
        return self._div_a(X, s, ds)

    @property
    def phi(self):
        return self.nonlinearity.phi

    @property
    def dphi(self):
        return self.nonlinearity.dphi


def _const_matrix_callbacks(mat: np.ndarray, dim: int):
    mat = np.asarray(mat, float)

    def s_fn(X):
        X = np.asarray(X, float)
        return np.broadcast_to(mat, X.shape[:-1] + (dim, dim)).copy()

    def ds_fn(X):
        X = np.asarray(X, float)
        return np.zeros(X.shape[:-1] + (dim, dim, dim))

    return s_fn, ds_fn


def make_coeffs(
    grid: Grid,
    preset: str = "identity",
    phi: Nonlinearity | str = "linear",
    phi_params: dict | None = None,
    **params,
) -> CoefficientSet:
    """Named presets: 'identity', 'diag' (c1[, c2]), 'shear' (gamma, 2D),
    'smooth-inhomogeneous' (s = (1 + delta prod_k sin(2 pi x_k/L_k)) I)."""
    d = grid.dim
    if isinstance(phi, str):
        phi = make_phi(phi, **(phi_params or {}))

    if preset == "identity":
        s_fn, ds_fn = _const_matrix_callbacks(np.eye(d), d)
    elif preset == "diag":
        c = params.pop("c", None)
        if c is None:
            c = [params.pop("c1", 1.0)] + ([params.pop("c2", 1.0)] if d == 2 else [])
        c = np.atleast_1d(np.asarray(c, float))
        if c.size != d:
            raise ValueError(f"diag preset needs {d} entries, got {c.size}")
        if np.any(c <= 0):
            raise ValueError("diag entries must be positive")
        s_fn, ds_fn = _const_matrix_callbacks(np.diag(c), d)
    elif preset == "shear":
        if d != 2:
            raise ValueError("shear preset is 2D only")
        gamma = float(params.pop("gamma", 0.5))
        s_fn, ds_fn = _const_matrix_callbacks(np.array([[1.0, gamma], [0.0, 1.0]]), d)
    elif preset == "smooth-inhomogeneous":
        delta = float(params.pop("delta", 0.2))
        if not 0.0 <= delta < 1.0:
            raise ValueError("need 0 <= delta < 1 to keep s uniformly elliptic")
        L = np.asarray(grid.extents, float)
        eye = np.eye(d)

        def s_fn(X):
            X = np.asarray(X, float)
            prof = np.prod(np.sin(2.0 * np.pi * X / L), axis=-1)
            return (1.0 + delta * prof)[..., None, None] * eye

        def ds_fn(X):
            X = np.asarray(X, float)
            phases = 2.0 * np.pi * X / L
            sines = np.sin(phases)
            out = np.zeros(X.shape[:-1] + (d, d, d))
            for k in range(d):
                dp = (2.0 * np.pi / L[k]) * np.cos(phases[..., k])
                for m in range(d):
                    if m != k:
                        dp = dp * sines[..., m]
                out[..., k, :, :] = (delta * dp)[..., None, None] * eye
            return out

    else:
        raise ValueError(f"unknown coefficient preset {preset!r}")
    if params:
        raise ValueError(f"unknown parameters for preset {preset!r}: {params}")
    return CoefficientSet(grid, s_fn, ds_fn, phi, name=preset,
                          params={"preset": preset, **params})


# --------------------------------------------------------------------------
# structural assumption checks


@dataclass(frozen=True)
class ValidationReport:
    lambda_ell: float
    Lambda_ell: float
    phi_prime_min: float
    phi_prime_max: float
    phi_at_zero: float
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def validate_assumptions(coeffs: CoefficientSet, eta_grid=None) -> ValidationReport:
    """Measure ellipticity of a over all sampled points and phi' over an
    eta grid; collect failures instead of raising."""
    mats = [coeffs.a_cells.reshape(-1, coeffs.grid.dim, coeffs.grid.dim)]
    for af in coeffs.a_faces:
        mats.append(af.reshape(-1, coeffs.grid.dim, coeffs.grid.dim))
    eigs = np.linalg.eigvalsh(np.concatenate(mats, axis=0))
    lam, Lam = float(eigs.min()), float(eigs.max())

    if eta_grid is None:
        eta_grid = np.linspace(0.0, 10.0, 1001)
    dphi = np.asarray(coeffs.dphi(eta_grid), float)
    phi0 = float(np.asarray(coeffs.phi(0.0)))

    failures = []
    if lam <= 0.0:
        failures.append(f"a is not uniformly elliptic: min eigenvalue {lam:g}")
    if abs(phi0) > 1e-14:
        failures.append(f"phi(0) = {phi0:g} != 0")
    if dphi.min() <= 0.0:
        failures.append(f"phi' reaches {dphi.min():g} <= 0 on the sample grid")
    return ValidationReport(
        lambda_ell=lam,
        Lambda_ell=Lam,
        phi_prime_min=float(dphi.min()),
        phi_prime_max=float(dphi.max()),
        phi_at_zero=phi0,
        failures=tuple(failures),
    )
