"""Fully discrete energy-stable time step: residual and analytic Jacobian.

One implicit step solves F(U') = 0 with

    F = (U' - U) / dt + A(c) G(U', U),

where A(c) = diag(-div c grad, c / rho) and G is the discrete variational
derivative: trapezoidal averages for the polynomial and gradient energy
parts plus the stabilized entropy chord for the logarithmic part.  By
construction the energy difference over a step equals <G . (U' - U)>
exactly, which is what makes the scheme unconditionally dissipative.

The mobility inside A is the trapezoidal mean of the old and new levels,
c = (c(U) + c(U')) / 2, evaluated per cell and averaged onto faces.  The
mean keeps the operator semi-positive (both levels are admissible, so both
mobilities are nonnegative) and keeps the step second-order accurate in
time; freezing c at the old level drops the observed temporal order to one.

The Jacobian is assembled analytically into a fixed block-sparse skeleton
(radius-2 coupling in the concentration rows, radius-1 in the order
parameter rows).  The skeleton and the entry position maps depend only on
the grid and boundary condition and are cached; a per-iteration assembly is
sparse products plus vectorized scatters, including the flux terms from
differentiating the new-level mobility.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .exceptions import InadmissibleStateError
from .grid import (
    BoundaryCondition,
    FaceField,
    Field,
    Grid,
    div_c_grad,
    fill_ghosts,
    laplacian,
)
from .linalg import StencilMatrix
from .physics import (
    Params,
    State,
    check_admissible,
    entropy_chord,
    entropy_chord_with_deriv,
    mobility,
    mobility_derivs,
    mobility_faces,
)


# ---------------------------------------------------------------------------
# vector packing (interleaved u, v per cell, x fastest)
# ---------------------------------------------------------------------------

def pack_fields(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty(2 * u.size)
    out[0::2] = u.ravel()
    out[1::2] = v.ravel()
    return out


def unpack_vector(grid: Grid, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shape = grid.array_shape
    return x[0::2].reshape(shape), x[1::2].reshape(shape)


def vector_from_state(state: State) -> np.ndarray:
    return pack_fields(state.u.interior, state.v.interior)


def state_from_vector(grid: Grid, x: np.ndarray) -> State:
    u, v = unpack_vector(grid, x)
    return State.from_interior(grid, u, v)


# ---------------------------------------------------------------------------
# divergence-form operator matrices and cached grid structure
# ---------------------------------------------------------------------------

def divgrad_csr(grid: Grid, faces: list[FaceField] | None) -> sparse.csr_matrix:
    """CSR matrix of g -> div c grad g for fixed face coefficients.

    ``faces=None`` uses unit coefficients, which yields the Laplacian with
    the grid's boundary handling.  Boundary behavior: periodic columns wrap;
    at Neumann walls the boundary-face flux vanishes, so the corresponding
    off-diagonal entry is absent and its diagonal share is dropped.  Entries
    that are numerically zero (degenerate mobility) are kept structurally,
    so the pattern depends only on the grid and boundary condition.
    """
    n = grid.n_cells
    ids = np.arange(n, dtype=np.int64).reshape(grid.array_shape)
    rows, cols, vals = [], [], []
    periodic = grid.bc is BoundaryCondition.PERIODIC
    for axis in range(grid.dim):
        na = grid.numpy_axis(axis)
        d2 = grid.spacing[axis] ** 2
        if faces is None:
            shape = list(grid.array_shape)
            shape[na] += 1
            fvals = np.ones(shape)
        else:
            fvals = faces[axis].values
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[na] = slice(0, -1)
        hi[na] = slice(1, None)
        c_left = fvals[tuple(lo)] / d2
        c_right = fvals[tuple(hi)] / d2

        right_ids = np.roll(ids, -1, axis=na)
        left_ids = np.roll(ids, +1, axis=na)
        valid_right = np.ones(grid.array_shape, dtype=bool)
        valid_left = np.ones(grid.array_shape, dtype=bool)
        if not periodic:
            last = [slice(None)] * grid.dim
            last[na] = -1
            first = [slice(None)] * grid.dim
            first[na] = 0
            valid_right[tuple(last)] = False
            valid_left[tuple(first)] = False

        vr = valid_right.ravel()
        vl = valid_left.ravel()
        rows.append(ids.ravel()[vr])
        cols.append(right_ids.ravel()[vr])
        vals.append(c_right.ravel()[vr])
        rows.append(ids.ravel()[vl])
        cols.append(left_ids.ravel()[vl])
        vals.append(c_left.ravel()[vl])
        diag = -(np.where(valid_right, c_right, 0.0) + np.where(valid_left, c_left, 0.0))
        rows.append(ids.ravel())
        cols.append(ids.ravel())
        vals.append(diag.ravel())
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    mat.sort_indices()
    return mat


def _entry_keys(mat: sparse.csr_matrix) -> np.ndarray:
    n = mat.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(mat.indptr))
    return rows * n + mat.indices


@dataclass
class _GridOperators:
    lap: sparse.csr_matrix
    skeleton_indptr: np.ndarray
    skeleton_indices: np.ndarray
    skeleton_keys: np.ndarray
    n_blocks: int
    map_diag: np.ndarray
    map_d1: np.ndarray
    d1_rows: np.ndarray


@lru_cache(maxsize=8)
def _grid_operators(grid: Grid) -> _GridOperators:
    lap = divgrad_csr(grid, None)
    n = grid.n_cells
    dones = lap.copy()
    dones.data = np.ones_like(dones.data)
    eye = sparse.identity(n, format="csr")
    skeleton = (eye + dones + dones @ dones).tocsr()
    skeleton.sort_indices()
    keys = _entry_keys(skeleton)
    map_diag = np.searchsorted(keys, np.arange(n, dtype=np.int64) * (n + 1))
    map_d1 = np.searchsorted(keys, _entry_keys(lap))
    d1_rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(lap.indptr))
    return _GridOperators(
        lap=lap,
        skeleton_indptr=skeleton.indptr.astype(np.int64),
        skeleton_indices=skeleton.indices.astype(np.int64),
        skeleton_keys=keys,
        n_blocks=skeleton.nnz,
        map_diag=map_diag,
        map_d1=map_d1,
        d1_rows=d1_rows,
    )


# ---------------------------------------------------------------------------
# one implicit time step
# ---------------------------------------------------------------------------

@dataclass
class StepProblem:
    """Frozen data of one implicit step: old state, dt, old-level mobilities.

    ``faces`` and ``cell_mobility`` hold the old-level mobility; the
    operator itself uses the trapezoidal mean of old and new levels, built
    on demand by :meth:`mean_faces` / :meth:`mean_cell_mobility`.
    """

    grid: Grid
    params: Params
    old: State
    dt: float
    faces: list[FaceField]
    cell_mobility: np.ndarray

    _old_parts: tuple | None = None

    @classmethod
    def create(cls, grid: Grid, params: Params, old: State, dt: float) -> "StepProblem":
        if not dt > 0.0:
            raise ValueError("time step must be positive")
        check_admissible(old)
        old.fill_ghosts()
        faces = mobility_faces(old.u, old.v)
        cell_mob = mobility(old.u.interior, old.v.interior)
        return cls(grid, params, old, float(dt), faces, cell_mob)

    def mean_faces(self, new: State) -> list[FaceField]:
        """Face mobilities of the time-averaged operator, (c^n + c^n+1)/2."""
        new_faces = mobility_faces(new.u, new.v)
        return [
            FaceField(self.grid, a, 0.5 * (old.values + fresh.values))
            for a, (old, fresh) in enumerate(zip(self.faces, new_faces))
        ]

    def mean_cell_mobility(self, new: State) -> np.ndarray:
        return 0.5 * (self.cell_mobility + mobility(new.u.interior, new.v.interior))

    def _old_cache(self):
        if self._old_parts is None:
            u = self.old.u.interior
            v = self.old.v.interior
            self._old_parts = (
                u,
                v,
                u + v,
                u - v,
                laplacian(self.old.u),
                laplacian(self.old.v),
            )
        return self._old_parts

    def dvd(self, new: State, force_exact: bool = False) -> tuple[Field, Field]:
        """Discrete variational derivative between the new and old states."""
        check_admissible(new)
        new.fill_ghosts()
        u_old, v_old, p_old, q_old, lap_u_old, lap_v_old = self._old_cache()
        gu, gv = _dvd_arrays(
            new.u.interior,
            new.v.interior,
            laplacian(new.u),
            laplacian(new.v),
            u_old,
            v_old,
            p_old,
            q_old,
            lap_u_old,
            lap_v_old,
            self.params,
            force_exact,
        )
        return Field.from_interior(self.grid, gu), Field.from_interior(self.grid, gv)


def _dvd_arrays(
    u_new, v_new, lap_u_new, lap_v_new,
    u_old, v_old, p_old, q_old, lap_u_old, lap_v_old,
    params: Params, force_exact: bool,
):
    phi_s = entropy_chord(u_new + v_new, p_old, params.series_order, force_exact)
    psi_s = entropy_chord(u_new - v_new, q_old, params.series_order, force_exact)
    gu = (
        -0.5 * params.alpha * (u_new + u_old - 1.0)
        + params.theta * (phi_s + psi_s)
        - 0.5 * params.gamma * (lap_u_new + lap_u_old)
    )
    gv = (
        -0.5 * params.beta * (v_new + v_old)
        + params.theta * (phi_s - psi_s)
        - 0.5 * params.gamma * (lap_v_new + lap_v_old)
    )
    return gu, gv


def discrete_var_deriv(
    new: State, old: State, params: Params, force_exact: bool = False
) -> tuple[Field, Field]:
    """Discrete variational derivative G(new, old) as a pair of fields.

    Satisfies the exact identity E(new) - E(old) = <G . (new - old)> when the
    entropy chord takes the exact-quotient route, and equals the continuous
    variational derivative when new == old.
    """
    check_admissible(new)
    check_admissible(old)
    new.fill_ghosts()
    old.fill_ghosts()
    u_old = old.u.interior
    v_old = old.v.interior
    gu, gv = _dvd_arrays(
        new.u.interior,
        new.v.interior,
        laplacian(new.u),
        laplacian(new.v),
        u_old,
        v_old,
        u_old + v_old,
        u_old - v_old,
        laplacian(old.u),
        laplacian(old.v),
        params,
        force_exact,
    )
    grid = new.grid
    return Field.from_interior(grid, gu), Field.from_interior(grid, gv)


def apply_mobility_operator(
    prob: StepProblem, gu: Field, gv: Field, new: State | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Apply A = diag(-div c grad, c/rho).

    With ``new`` given, the mobility is the trapezoidal mean of the two time
    levels (the operator the scheme actually uses); without it the old-level
    mobility alone is applied.
    """
    if new is None:
        faces = prob.faces
        cells = prob.cell_mobility
    else:
        faces = prob.mean_faces(new)
        cells = prob.mean_cell_mobility(new)
    a1 = -div_c_grad(faces, gu)
    a2 = (cells / prob.params.rho) * gv.interior
    return a1, a2


def step_residual(prob: StepProblem, new: State, force_exact: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Residual F(new) of the implicit step; zero iff `new` solves the step."""
    gu, gv = prob.dvd(new, force_exact)
    a1, a2 = apply_mobility_operator(prob, gu, gv, new)
    fu = (new.u.interior - prob.old.u.interior) / prob.dt + a1
    fv = (new.v.interior - prob.old.v.interior) / prob.dt + a2
    return fu, fv


def residual_vector(prob: StepProblem, new: State) -> np.ndarray:
    fu, fv = step_residual(prob, new)
    return pack_fields(fu, fv)


def flux_linearization_csr(
    grid: Grid, g: Field, quarter_deriv: np.ndarray
) -> sparse.csr_matrix:
    """Linearization of div(c grad g) through the new-level mobility.

    For the trapezoidal mobility, each face value depends on the two
    adjacent new-level cells with weight 1/4 * dc/dy; the resulting matrix
    entry couples cell z to each neighbor w through the current flux
    difference of g across their shared face:

        N[z, w] = -(1/d^2) * quarter_deriv[w] * (g[w'] - g[w]) summed over
        the faces of z adjacent to w,

    with the same structural pattern (and boundary clipping) as the
    divergence operator itself.  ``quarter_deriv`` holds 1/4 * dc/dy at the
    new state, interior-shaped; ``g`` must have its ghosts filled.
    """
    n = grid.n_cells
    ids = np.arange(n, dtype=np.int64).reshape(grid.array_shape)
    rows, cols, vals = [], [], []
    periodic = grid.bc is BoundaryCondition.PERIODIC
    for axis in range(grid.dim):
        na = grid.numpy_axis(axis)
        d2 = grid.spacing[axis] ** 2
        sl_all = [slice(1, -1)] * grid.dim
        sl_all[na] = slice(None)
        gv = g.values[tuple(sl_all)]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[na] = slice(0, -1)
        hi[na] = slice(1, None)
        face_diff = gv[tuple(hi)] - gv[tuple(lo)]
        dg_left = face_diff[tuple(lo)] / d2
        dg_right = face_diff[tuple(hi)] / d2

        right_ids = np.roll(ids, -1, axis=na)
        left_ids = np.roll(ids, +1, axis=na)
        deriv_right = np.roll(quarter_deriv, -1, axis=na)
        deriv_left = np.roll(quarter_deriv, +1, axis=na)
        valid_right = np.ones(grid.array_shape, dtype=bool)
        valid_left = np.ones(grid.array_shape, dtype=bool)
        if not periodic:
            last = [slice(None)] * grid.dim
            last[na] = -1
            first = [slice(None)] * grid.dim
            first[na] = 0
            valid_right[tuple(last)] = False
            valid_left[tuple(first)] = False

        vr = valid_right.ravel()
        vl = valid_left.ravel()
        rows.append(ids.ravel()[vr])
        cols.append(right_ids.ravel()[vr])
        vals.append((-dg_right * deriv_right).ravel()[vr])
        rows.append(ids.ravel()[vl])
        cols.append(left_ids.ravel()[vl])
        vals.append((dg_left * deriv_left).ravel()[vl])
        diag = -quarter_deriv * (
            np.where(valid_right, dg_right, 0.0) - np.where(valid_left, dg_left, 0.0)
        )
        rows.append(ids.ravel())
        cols.append(ids.ravel())
        vals.append(diag.ravel())
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    mat.sort_indices()
    return mat


def assemble_jacobian(prob: StepProblem, new: State) -> StencilMatrix:
    """Analytic Jacobian of the step residual with respect to the new state.

    Block layout per cell pair (row cell z, column cell w):

        [ d F_u / d u_w   d F_u / d v_w ]
        [ d F_v / d u_w   d F_v / d v_w ]

    The u rows couple over the composition of the mobility divergence with
    the Laplacian (radius 2); the v rows are local plus one Laplacian
    (radius 1).  The entropy chord is differentiated per branch, and the
    dependence of the trapezoidal mobility on the new state enters through
    radius-1 flux terms (u rows) and diagonal terms (v rows).
    """
    check_admissible(new)
    new.fill_ghosts()
    grid = prob.grid
    params = prob.params
    ops = _grid_operators(grid)

    divc = divgrad_csr(grid, prob.mean_faces(new))
    divclap = (divc @ ops.lap).tocsr()
    divclap.sort_indices()
    map_dlap = np.searchsorted(ops.skeleton_keys, _entry_keys(divclap))

    u_old, v_old, p_old, q_old, _, _ = prob._old_cache()
    u = new.u.interior
    v = new.v.interior
    _, dp = entropy_chord_with_deriv(u + v, p_old, params.series_order)
    _, dq = entropy_chord_with_deriv(u - v, q_old, params.series_order)
    m_uu = (-0.5 * params.alpha + params.theta * (dp + dq)).ravel()
    m_uv = (params.theta * (dp - dq)).ravel()
    m_vv = (-0.5 * params.beta + params.theta * (dp + dq)).ravel()
    crho = (prob.mean_cell_mobility(new) / params.rho).ravel()

    # mobility linearization: flux terms for the u rows, local for the v rows
    gu_field, gv_field = prob.dvd(new)
    dcu, dcv = mobility_derivs(u, v)
    n_u = flux_linearization_csr(grid, gu_field, 0.25 * dcu)
    n_v = flux_linearization_csr(grid, gu_field, 0.25 * dcv)
    if n_u.nnz != ops.lap.nnz or divc.nnz != ops.lap.nnz:
        raise AssertionError("flux linearization pattern diverged from the operator pattern")
    gv_over_rho = (gv_field.interior / (2.0 * params.rho)).ravel()

    idt = 1.0 / prob.dt
    half_gamma = 0.5 * params.gamma
    data = np.zeros((ops.n_blocks, 2, 2))
    data[ops.map_diag, 0, 0] += idt
    data[ops.map_d1, 0, 0] -= divc.data * m_uu[divc.indices]
    data[ops.map_d1, 0, 0] += n_u.data
    data[map_dlap, 0, 0] += half_gamma * divclap.data
    data[ops.map_d1, 0, 1] -= divc.data * m_uv[divc.indices]
    data[ops.map_d1, 0, 1] += n_v.data
    data[ops.map_diag, 1, 0] += crho * m_uv + gv_over_rho * dcu.ravel()
    data[ops.map_diag, 1, 1] += idt + crho * m_vv + gv_over_rho * dcv.ravel()
    data[ops.map_d1, 1, 1] -= half_gamma * crho[ops.d1_rows] * ops.lap.data

    return StencilMatrix(grid.n_cells, ops.skeleton_indptr, ops.skeleton_indices, data)


def trial_state(grid: Grid, base: np.ndarray, direction: np.ndarray, step: float) -> State:
    """State at base + step * direction in packed-vector coordinates.

    The result may be inadmissible; callers check before evaluating energies
    or residuals on it.
    """
    u, v = unpack_vector(grid, base + step * direction)
    f_u = Field.zeros(grid)
    f_u.interior[...] = u
    f_v = Field.zeros(grid)
    f_v.interior[...] = v
    return State(f_u, f_v)
