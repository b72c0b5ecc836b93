"""Uniform cell-centered grids on axis-aligned boxes with no-flux boundaries.

Conventions used throughout the package:

  - Cell centers sit at (i + 1/2) * h along each axis; cell values are stored
    row-major with shape == grid.cells.
  - Only interior faces are stored.  Along axis k the face array has
    cells[k] - 1 entries in that direction and cells[j] in every other
    direction j.  Boundary faces carry zero flux by construction.
  - ``gradient`` maps cell values to per-axis face values, ``divergence`` maps
    per-axis face fluxes back to cells.  The pair satisfies the
    summation-by-parts identity

        sum_cells u * div(F) * V  ==  - sum_axes sum_faces F * grad(u) * V

    exactly (up to roundoff), which makes div(c grad .) symmetric and
    negative semidefinite for nonnegative face coefficients c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolvabilityError(ValueError):
    """Right-hand side is incompatible with the pure-flux boundary condition."""


class EllipticSolveError(RuntimeError):
    """The elliptic solve did not reach the requested residual."""


@dataclass(frozen=True)
class Grid:
    """Uniform box grid; dims 1 or 2.

    extents: physical side lengths per axis (box is [0, L_1] x ... ).
    cells:   cell counts per axis.
    """

    extents: tuple[float, ...]
    cells: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        v = 1.0
        for h in self.spacing:
            v *= h
        return v

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def face_count(self, axis: int) -> int:
        """Number of interior faces orthogonal to `axis`."""
        n = 1
        for k, c in enumerate(self.cells):
            n *= (c - 1) if k == axis else c
        return n

    def face_shape(self, axis: int) -> tuple[int, ...]:
        return tuple(c - 1 if k == axis else c for k, c in enumerate(self.cells))

    def cell_centers(self) -> list[np.ndarray]:
        """Coordinate arrays (meshgrid, 'ij') of shape == cells, one per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.spacing)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def face_centers(self, axis: int) -> list[np.ndarray]:
        """Coordinate arrays of shape == face_shape(axis), one per axis."""
        axes = []
        for k, (n, h) in enumerate(zip(self.cells, self.spacing)):
            if k == axis:
                axes.append((np.arange(n - 1) + 1.0) * h)
            else:
                axes.append((np.arange(n) + 0.5) * h)
        return list(np.meshgrid(*axes, indexing="ij"))


@dataclass
class CellField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(self.grid.cells):
            raise ValueError(
                f"cell values shape {self.values.shape} != grid cells {self.grid.cells}"
            )

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class FaceField:
    """One array per axis holding interior-face values for that axis."""

    grid: Grid
    values: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.values = [np.asarray(v, dtype=float) for v in self.values]
        if len(self.values) != self.grid.dim:
            raise ValueError("need one face array per axis")
        for ax, v in enumerate(self.values):
            if v.shape != self.grid.face_shape(ax):
                raise ValueError(
                    f"axis {ax} face shape {v.shape} != {self.grid.face_shape(ax)}"
                )


def build_grid(extents, cells) -> Grid:
    extents = tuple(float(L) for L in np.atleast_1d(extents))
    cells = tuple(int(n) for n in np.atleast_1d(cells))
    if len(extents) != len(cells):
        raise ValueError(f"extents {extents} and cells {cells} differ in length")
    if len(cells) not in (1, 2):
        raise ValueError(f"only 1d and 2d boxes are supported, got {len(cells)}d")
    if any(L <= 0 for L in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(n < 2 for n in cells):
        raise ValueError(f"need at least 2 cells per axis, got {cells}")
    return Grid(extents, cells)


def grad_values(grid: Grid, u: np.ndarray) -> list[np.ndarray]:
    """Per-axis face gradients of cell values (two-point difference)."""
    return [np.diff(u, axis=ax) / grid.spacing[ax] for ax in range(grid.dim)]


def div_values(grid: Grid, fluxes: list[np.ndarray]) -> np.ndarray:
    """Cell divergence of per-axis face fluxes; boundary faces contribute 0."""
    out = np.zeros(grid.cells)
    for ax, F in enumerate(fluxes):
        out += np.diff(F, axis=ax, prepend=0.0, append=0.0) / grid.spacing[ax]
    return out


def gradient(u: CellField) -> FaceField:
    return FaceField(u.grid, grad_values(u.grid, u.values))


def divergence(F: FaceField) -> CellField:
    return CellField(F.grid, div_values(F.grid, F.values))


def operator_matrix(grid: Grid, a_faces: FaceField | list[np.ndarray]) -> sp.csr_matrix:
    """Sparse matrix of u -> -div(a grad u) with zero-flux boundaries.

    `a_faces` holds the face-normal coefficient per axis.  The assembled matrix
    is symmetric by construction and positive semidefinite for a >= 0, with
    the constants as null space.
    """
    vals = a_faces.values if isinstance(a_faces, FaceField) else a_faces
    n = grid.n_cells
    idx = np.arange(n).reshape(grid.cells)
    rows, cols, data = [], [], []
    for ax in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        i = idx[tuple(lo)].ravel()
        j = idx[tuple(hi)].ravel()
        w = np.asarray(vals[ax], dtype=float).ravel() / grid.spacing[ax] ** 2
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        data += [w, w, -w, -w]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


class NeumannPoisson:
    """Factorized solver for -div(a grad z) = rhs with zero-flux boundaries.

    The singular operator is completed with the zero-mean constraint via a
    saddle-point system [[L, 1], [1^T, 0]] factorized once (sparse LU); any
    solver meeting the residual contract would do.  ``solve`` verifies
    ||L z - rhs||_2 <= tol * ||rhs||_2 and that in/out means vanish.
    """

    #: |mean(rhs)| may not exceed MEAN_SLACK * ||rhs||_2
    MEAN_SLACK = 10 * np.finfo(float).eps

    def __init__(self, grid: Grid, a_faces, tol: float = 1e-10):
        self.grid = grid
        self.tol = float(tol)
        self.matrix = operator_matrix(grid, a_faces)
        n = grid.n_cells
        ones = np.ones((n, 1))
        K = sp.bmat([[self.matrix, ones], [ones.T, None]], format="csc")
        self._lu = spla.splu(K)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = np.asarray(rhs, dtype=float).ravel()
        norm = np.linalg.norm(r)
        if norm == 0.0:
            return np.zeros(self.grid.cells)
        mean = r.mean()
        if abs(mean) > self.MEAN_SLACK * norm:
            raise SolvabilityError(
                f"rhs mean {mean:g} is not zero (||rhs|| {norm:g}); "
                "pure-flux boundaries require a zero-mean source"
            )
        r = r - mean  # project out roundoff-level mean before solving
        z = self._lu.solve(np.concatenate([r, [0.0]]))[:-1]
        z -= z.mean()
        res = np.linalg.norm(self.matrix @ z - r)
        if res > self.tol * np.linalg.norm(r):
            raise EllipticSolveError(
                f"residual {res:g} exceeds tol*||rhs|| = {self.tol * np.linalg.norm(r):g}"
            )
        return z.reshape(self.grid.cells)


def neumann_solve(a_faces: FaceField, rhs: CellField, tol: float = 1e-10) -> CellField:
    """One-shot zero-mean solve of -div(a grad z) = rhs.

    For repeated solves against the same coefficients build a
    :class:`NeumannPoisson` once and reuse it.
    """
    solver = NeumannPoisson(rhs.grid, a_faces, tol=tol)
    return CellField(rhs.grid, solver.solve(rhs.values))
