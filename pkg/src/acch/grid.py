"""Structured uniform mesh, ghost layers, and finite difference operators.

Cells are indexed per axis by i = 1..N with centers at (i - 1/2) * dx; arrays
carry one ghost layer per side so every stencil below is a plain 3-point
formula per axis.  Storage is index-reversed relative to the (x, y, z) axis
order: a 2D field has shape (Ny + 2, Nx + 2) and a 3D field
(Nz + 2, Ny + 2, Nx + 2), which makes the x index the fastest-varying one in
memory and lets ``interior.ravel()`` produce the cell ordering used for
solver vectors (flat id = i + Nx * (j + Ny * k), zero-based).

All reductions go through :func:`integrate` / :func:`inner`, which rely on
numpy's fixed-order pairwise summation and are therefore bitwise
deterministic for a given grid regardless of worker thread counts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BoundaryCondition(enum.Enum):
    PERIODIC = "periodic"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered mesh on a 2D or 3D box.

    Parameters
    ----------
    counts : tuple of int
        Cells per axis, (Nx, Ny) or (Nx, Ny, Nz).  Each must be >= 4.
    lengths : tuple of float
        Box extents per axis, all positive.
    bc : BoundaryCondition
        Periodic wrap or homogeneous Neumann (mirrored ghosts).
    """

    counts: tuple[int, ...]
    lengths: tuple[float, ...]
    bc: BoundaryCondition

    def __post_init__(self):
        if len(self.counts) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(self.counts)} axes")
        if len(self.lengths) != len(self.counts):
            raise ValueError("counts and lengths must have the same number of axes")
        if any(int(n) < 4 for n in self.counts):
            raise ValueError(f"need at least 4 cells per axis, got {self.counts}")
        if any(not (float(L) > 0.0) for L in self.lengths):
            raise ValueError(f"box extents must be positive, got {self.lengths}")
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def domain_volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def array_shape(self) -> tuple[int, ...]:
        """Interior array shape, axis order reversed (x fastest)."""
        return tuple(reversed(self.counts))

    @property
    def ghost_shape(self) -> tuple[int, ...]:
        return tuple(n + 2 for n in self.array_shape)

    def numpy_axis(self, axis: int) -> int:
        """Map spatial axis (0=x, 1=y, 2=z) to the numpy array axis."""
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for {self.dim}D grid")
        return self.dim - 1 - axis

    def cell_centers(self, axis: int) -> np.ndarray:
        d = self.spacing[axis]
        return (np.arange(self.counts[axis]) + 0.5) * d

    def center_mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to ``array_shape``, returned as (x, y[, z])."""
        coords = [self.cell_centers(a) for a in range(self.dim)]
        mesh = np.meshgrid(*reversed(coords), indexing="ij")
        return tuple(reversed(mesh))


def _axslice(ndim: int, np_axis: int, index) -> tuple:
    sl = [slice(None)] * ndim
    sl[np_axis] = index
    return tuple(sl)


_INTERIOR = slice(1, -1)


@dataclass
class Field:
    """Scalar cell values with one ghost layer per side."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.ghost_shape:
            raise ValueError(
                f"field array shape {self.values.shape} does not match "
                f"ghosted grid shape {self.grid.ghost_shape}"
            )

    @property
    def interior(self) -> np.ndarray:
        """Writable view of the non-ghost cells."""
        return self.values[(_INTERIOR,) * self.values.ndim]

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.ghost_shape))

    @classmethod
    def from_interior(cls, grid: Grid, interior: np.ndarray) -> "Field":
        """Wrap interior cell values in a ghosted array and fill the ghosts."""
        interior = np.asarray(interior, dtype=float)
        if interior.shape != grid.array_shape:
            raise ValueError(
                f"interior shape {interior.shape} does not match grid {grid.array_shape}"
            )
        f = cls.zeros(grid)
        f.interior[...] = interior
        return fill_ghosts(f)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


@dataclass
class FaceField:
    """Values on the cell faces normal to one axis.

    The array has ``counts[axis] + 1`` entries along its own axis: entry m is
    the face between cells m and m+1 (zero-based), so entries 0 and N sit on
    the domain boundary.  Under periodic conditions the two boundary entries
    describe the same physical face and hold equal values.
    """

    grid: Grid
    axis: int
    values: np.ndarray

    def __post_init__(self):
        expect = list(self.grid.array_shape)
        expect[self.grid.numpy_axis(self.axis)] += 1
        if self.values.shape != tuple(expect):
            raise ValueError(
                f"face array shape {self.values.shape} does not match "
                f"expected {tuple(expect)} for axis {self.axis}"
            )


def fill_ghosts(f: Field) -> Field:
    """Fill the ghost layer in place from the interior values and return f.

    Periodic wraps; Neumann mirrors the adjacent interior cell, which
    discretizes a homogeneous zero-flux boundary.  Axes are processed in
    sequence over full array slabs so corner ghosts end up consistent.
    """
    v = f.values
    periodic = f.grid.bc is BoundaryCondition.PERIODIC
    for na in range(v.ndim):
        n = v.shape[na] - 2
        if periodic:
            v[_axslice(v.ndim, na, 0)] = v[_axslice(v.ndim, na, n)]
            v[_axslice(v.ndim, na, n + 1)] = v[_axslice(v.ndim, na, 1)]
        else:
            v[_axslice(v.ndim, na, 0)] = v[_axslice(v.ndim, na, 1)]
            v[_axslice(v.ndim, na, n + 1)] = v[_axslice(v.ndim, na, n)]
    return f


def _shifted(f: Field, np_axis: int, offset: int) -> np.ndarray:
    """Interior-shaped view of the ghosted array shifted by offset cells."""
    ndim = f.values.ndim
    sl = [_INTERIOR] * ndim
    sl[np_axis] = slice(1 + offset, f.values.shape[np_axis] - 1 + offset)
    return f.values[tuple(sl)]


def diff_forward(f: Field, axis: int) -> np.ndarray:
    """(v[i+1] - v[i]) / d at every cell; ghosts must be filled."""
    na = f.grid.numpy_axis(axis)
    d = f.grid.spacing[axis]
    return (_shifted(f, na, +1) - f.interior) / d


def diff_backward(f: Field, axis: int) -> np.ndarray:
    """(v[i] - v[i-1]) / d at every cell; ghosts must be filled."""
    na = f.grid.numpy_axis(axis)
    d = f.grid.spacing[axis]
    return (f.interior - _shifted(f, na, -1)) / d


def diff_half(f: Field, axis: int) -> np.ndarray:
    """One-sided difference on faces: (v[m+1] - v[m]) / d at face m.

    Returns an array of face shape (N+1 along the axis).  Boundary faces use
    the ghost values, so a Neumann field has exactly zero gradient there.
    """
    na = f.grid.numpy_axis(axis)
    d = f.grid.spacing[axis]
    sl_all = [_INTERIOR] * f.values.ndim
    sl_all[na] = slice(None)
    g = f.values[tuple(sl_all)]
    lo = _axslice(g.ndim, na, slice(0, -1))
    hi = _axslice(g.ndim, na, slice(1, None))
    return (g[hi] - g[lo]) / d


def face_average(f: Field) -> list[FaceField]:
    """Arithmetic mean of the two adjacent cell values on every face."""
    out = []
    for axis in range(f.grid.dim):
        na = f.grid.numpy_axis(axis)
        sl_all = [_INTERIOR] * f.values.ndim
        sl_all[na] = slice(None)
        g = f.values[tuple(sl_all)]
        lo = _axslice(g.ndim, na, slice(0, -1))
        hi = _axslice(g.ndim, na, slice(1, None))
        out.append(FaceField(f.grid, axis, 0.5 * (g[lo] + g[hi])))
    return out


def grad_sq_avg(f: Field) -> np.ndarray:
    """Average of squared one-sided differences, summed over axes.

    This is the discrete |grad|^2 used in the free energy: per axis,
    ((D+ v)^2 + (D- v)^2) / 2.
    """
    out = np.zeros(f.grid.array_shape)
    for axis in range(f.grid.dim):
        dp = diff_forward(f, axis)
        dm = diff_backward(f, axis)
        out += 0.5 * (dp * dp + dm * dm)
    return out


def laplacian(f: Field) -> np.ndarray:
    """Standard 5-point (2D) / 7-point (3D) Laplacian with bc via ghosts."""
    out = np.zeros(f.grid.array_shape)
    c = f.interior
    for axis in range(f.grid.dim):
        na = f.grid.numpy_axis(axis)
        d = f.grid.spacing[axis]
        out += (_shifted(f, na, +1) - 2.0 * c + _shifted(f, na, -1)) / (d * d)
    return out


def div_c_grad(c_faces: list[FaceField], g: Field) -> np.ndarray:
    """Conservative flux-difference divergence: div(c grad g).

    Per axis: (c[m+1](g[i+1]-g[i]) - c[m](g[i]-g[i-1])) / d^2 where faces m
    and m+1 enclose cell i.  The total over all cells telescopes to zero for
    both boundary conditions.
    """
    grid = g.grid
    if len(c_faces) != grid.dim:
        raise ValueError(f"need one face field per axis, got {len(c_faces)}")
    out = np.zeros(grid.array_shape)
    for axis in range(grid.dim):
        cf = c_faces[axis]
        if cf.axis != axis:
            raise ValueError("face fields must be ordered by axis")
        na = grid.numpy_axis(axis)
        d = grid.spacing[axis]
        sl_all = [_INTERIOR] * g.values.ndim
        sl_all[na] = slice(None)
        gv = g.values[tuple(sl_all)]
        lo = _axslice(gv.ndim, na, slice(0, -1))
        hi = _axslice(gv.ndim, na, slice(1, None))
        flux = cf.values * (gv[hi] - gv[lo])
        out += (flux[hi] - flux[lo]) / (d * d)
    return out


def integrate(grid: Grid, values: np.ndarray) -> float:
    """Discrete integral <.> = sum over cells times the cell volume."""
    return float(np.sum(values)) * grid.cell_volume


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    """Discrete L2 pairing <a b> with the cell volume weight."""
    return float(np.sum(a * b)) * grid.cell_volume
