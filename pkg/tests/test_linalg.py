"""Decomposition, ILU/LU, Schwarz preconditioner and GMRES tests."""

import numpy as np
import pytest
from scipy import sparse

from acch.exceptions import PartitionError, ZeroPivotError
from acch.grid import BoundaryCondition
from acch.linalg import (
    GmresResult,
    SchwarzPreconditioner,
    SchwarzVariant,
    StencilMatrix,
    SubdomainSolverSpec,
    gmres,
    ilu_factor,
    interleave_dofs,
    lu_factor,
    partition,
)
from acch.physics import Params, State
from acch.scheme import StepProblem, assemble_jacobian

from conftest import BOTH_BC, make_grid, random_admissible

PARAMS = Params(alpha=4.0, beta=2.0, gamma=0.005, theta=0.1, rho=0.001)


def jacobian_matrix(grid, rng, dt=1e-3):
    u, v = random_admissible(grid, rng)
    old = State.from_interior(grid, u, v)
    prob = StepProblem.create(grid, PARAMS, old, dt)
    u2, v2 = random_admissible(grid, rng)
    return assemble_jacobian(prob, State.from_interior(grid, u2, v2))


def block_diagonal_matrix(n_cells, rng):
    indptr = np.arange(n_cells + 1, dtype=np.int64)
    indices = np.arange(n_cells, dtype=np.int64)
    blocks = rng.standard_normal((n_cells, 2, 2))
    blocks += 4.0 * np.eye(2)
    return StencilMatrix(n_cells, indptr, indices, blocks)


def block_tridiagonal_matrix(n_cells, rng):
    rows, cols = [], []
    for i in range(n_cells):
        for j in (i - 1, i, i + 1):
            if 0 <= j < n_cells:
                rows.append(i)
                cols.append(j)
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    indptr = np.zeros(n_cells + 1, dtype=np.int64)
    np.add.at(indptr[1:], rows, 1)
    indptr = np.cumsum(indptr)
    blocks = 0.3 * rng.standard_normal((len(rows), 2, 2))
    blocks[rows == cols] += 5.0 * np.eye(2)
    return StencilMatrix(n_cells, indptr.astype(np.int64), cols.astype(np.int64), blocks)


# ---------------------------------------------------------------------------
# StencilMatrix basics
# ---------------------------------------------------------------------------

def test_stencil_matvec_and_restrict(rng):
    grid = make_grid((6, 6))
    mat = jacobian_matrix(grid, rng)
    mat.validate()
    dense = mat.to_csr().toarray()
    x = rng.standard_normal(mat.shape[0])
    np.testing.assert_allclose(mat.matvec(x), dense @ x, rtol=1e-13, atol=1e-13)

    cells = np.sort(rng.choice(grid.n_cells, size=14, replace=False))
    sub = mat.restrict_cells(cells)
    dofs = interleave_dofs(cells)
    np.testing.assert_allclose(sub.to_csr().toarray(), dense[np.ix_(dofs, dofs)], atol=0)


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

def test_partition_single_box():
    grid = make_grid((8, 8))
    dec = partition(grid, 1, 0)
    assert dec.n_subdomains == 1
    assert np.array_equal(dec.owned_cells[0], np.arange(64))
    assert np.array_equal(dec.extended_cells[0], np.arange(64))


def test_partition_four_boxes_neumann():
    grid = make_grid((8, 8), bc=BoundaryCondition.NEUMANN)
    dec = partition(grid, 4, 1)
    assert all(len(c) == 16 for c in dec.owned_cells)
    # extension clipped at the walls: corner boxes grow to 5x5
    assert all(len(e) == 25 for e in dec.extended_cells)
    tiled = np.sort(np.concatenate(dec.owned_cells))
    assert np.array_equal(tiled, np.arange(64))


def test_partition_periodic_wraps():
    grid = make_grid((8, 8), bc=BoundaryCondition.PERIODIC)
    dec = partition(grid, 4, 1)
    # wrap: every box extends to 6x6 regardless of position
    assert all(len(e) == 36 for e in dec.extended_cells)
    for own, ext, pos in zip(dec.owned_cells, dec.extended_cells, dec.owned_in_extended):
        assert np.array_equal(ext[pos], own)


@pytest.mark.parametrize("bc", BOTH_BC)
@pytest.mark.parametrize("counts,nsub,overlap", [((12, 8), 6, 2), ((8, 8), 8, 1), ((6, 4, 4), 4, 1)])
def test_partition_membership_oracle(bc, counts, nsub, overlap, rng):
    grid = make_grid(counts, bc=bc)
    dec = partition(grid, nsub, overlap)
    tiled = np.sort(np.concatenate(dec.owned_cells))
    assert np.array_equal(tiled, np.arange(grid.n_cells))
    periodic = bc is BoundaryCondition.PERIODIC

    def coords(cell):
        out = []
        rest = int(cell)
        for a in range(grid.dim):
            out.append(rest % grid.counts[a])
            rest //= grid.counts[a]
        return out

    for own, ext in zip(dec.owned_cells, dec.extended_cells):
        assert np.all(np.isin(own, ext))
        own_coords = np.array([coords(c) for c in own])
        for cell in ext:
            cc = coords(cell)
            dist = 0
            for a in range(grid.dim):
                d = np.abs(own_coords[:, a] - cc[a])
                if periodic:
                    d = np.minimum(d, grid.counts[a] - d)
                dist = max(dist, 0)
            # within overlap of the owned box per axis
            per_axis_ok = True
            for a in range(grid.dim):
                d = np.abs(own_coords[:, a] - cc[a])
                if periodic:
                    d = np.minimum(d, grid.counts[a] - d)
                if d.min() > overlap:
                    per_axis_ok = False
            assert per_axis_ok, (cell, cc)


def test_partition_errors():
    grid = make_grid((4, 4))
    with pytest.raises(PartitionError):
        partition(grid, 64, 0)
    with pytest.raises(PartitionError):
        partition(grid, 5, 0)  # no admissible 2D factorization of 5 on 4 cells
    with pytest.raises(PartitionError):
        partition(grid, 0, 0)
    with pytest.raises(PartitionError):
        partition(grid, 2, -1)


# ---------------------------------------------------------------------------
# factorizations
# ---------------------------------------------------------------------------

def test_ilu0_exact_on_block_diagonal(rng):
    mat = block_diagonal_matrix(12, rng)
    fac = ilu_factor(mat, 0)
    dense = mat.to_csr().toarray()
    b = rng.standard_normal(24)
    np.testing.assert_allclose(fac.solve(b), np.linalg.solve(dense, b), rtol=1e-12, atol=1e-12)


def test_ilu0_equals_lu_on_block_tridiagonal(rng):
    mat = block_tridiagonal_matrix(10, rng)
    fac = ilu_factor(mat, 0)
    dense = mat.to_csr().toarray()
    b = rng.standard_normal(20)
    np.testing.assert_allclose(fac.solve(b), np.linalg.solve(dense, b), rtol=1e-11, atol=1e-11)


def test_lu_matches_dense(rng):
    grid = make_grid((8, 8))
    mat = jacobian_matrix(grid, rng)
    fac = lu_factor(mat)
    dense = mat.to_csr().toarray()
    b = rng.standard_normal(mat.shape[0])
    x = fac.solve(b)
    assert np.linalg.norm(dense @ x - b) <= 1e-12 * np.linalg.norm(b)


def factorization_residual(mat, level):
    fac = ilu_factor(mat, level)
    pat = fac.pattern
    n = pat.n_scalar
    lu = sparse.csr_matrix((fac.data, pat.indices, pat.indptr), shape=(n, n)).toarray()
    low = np.tril(lu, -1) + np.eye(n)
    up = np.triu(lu)
    a = mat.to_csr().toarray()
    return np.linalg.norm(low @ up - a)


def diag_dominant_stencil_matrix(grid, rng):
    """Random diagonally dominant matrix on the grid's Laplacian pattern."""
    from acch.scheme import divgrad_csr

    lap = divgrad_csr(grid, None)
    base = (sparse.identity(grid.n_cells, format="csr") * 4.0 - lap).tocsr()
    base.sort_indices()
    blocks = 0.05 * rng.standard_normal((base.nnz, 2, 2))
    blocks[:, 0, 0] += base.data
    blocks[:, 1, 1] += base.data
    return StencilMatrix(
        grid.n_cells, base.indptr.astype(np.int64), base.indices.astype(np.int64), blocks
    )


def test_ilu_level_monotone_factor_error(rng):
    grid = make_grid((8, 6), bc=BoundaryCondition.PERIODIC)
    mat = diag_dominant_stencil_matrix(grid, rng)
    res = [factorization_residual(mat, k) for k in (0, 1, 2)]
    assert 0.0 < res[1] <= res[0] * (1 + 1e-12)
    assert res[2] <= res[1] * (1 + 1e-12)
    # enough fill makes the factorization exact
    assert factorization_residual(mat, 16) <= 1e-9


def test_ilu_zero_pivot_reports_cell(rng):
    mat = block_diagonal_matrix(6, rng)
    mat.blocks[3] = 0.0
    with pytest.raises(ZeroPivotError) as err:
        ilu_factor(mat, 0, cells=np.arange(6))
    assert err.value.cell == 3


# ---------------------------------------------------------------------------
# Schwarz preconditioner
# ---------------------------------------------------------------------------

def make_precond(grid, mat, nsub, overlap, variant, subsolver="ilu0"):
    dec = partition(grid, nsub, overlap)
    pre = SchwarzPreconditioner(dec, variant, SubdomainSolverSpec.from_string(subsolver))
    pre.update(mat)
    return pre


def test_exact_preconditioner_single_iteration(rng):
    grid = make_grid((8, 8))
    mat = jacobian_matrix(grid, rng)
    pre = make_precond(grid, mat, 1, 0, SchwarzVariant.CLASSICAL, "lu")
    b = rng.standard_normal(mat.shape[0])
    res = gmres(mat.matvec, b, precond=pre, rel_tol=1e-10)
    assert res.converged
    assert res.iterations == 1


def test_identity_matrix_passthrough(rng):
    grid = make_grid((8, 8))
    n = grid.n_cells
    eye = StencilMatrix(
        n,
        np.arange(n + 1, dtype=np.int64),
        np.arange(n, dtype=np.int64),
        np.tile(np.eye(2), (n, 1, 1)),
    )
    r = rng.standard_normal(2 * n)
    # classical AS with no overlap and both restricted variants with overlap
    for variant, overlap in [
        (SchwarzVariant.CLASSICAL, 0),
        (SchwarzVariant.LEFT_RAS, 1),
        (SchwarzVariant.RIGHT_RAS, 1),
    ]:
        pre = make_precond(grid, eye, 4, overlap, variant, "lu")
        np.testing.assert_allclose(pre.apply(r), r, rtol=0, atol=1e-14)


def test_classical_no_overlap_is_block_jacobi(rng):
    grid = make_grid((8, 8))
    mat = jacobian_matrix(grid, rng)
    dec = partition(grid, 4, 0)
    pre = SchwarzPreconditioner(dec, SchwarzVariant.CLASSICAL, SubdomainSolverSpec("lu"))
    pre.update(mat)
    r = rng.standard_normal(mat.shape[0])
    got = pre.apply(r)
    dense = mat.to_csr().toarray()
    expect = np.zeros_like(r)
    for own in dec.owned_cells:
        dofs = interleave_dofs(own)
        expect[dofs] = np.linalg.solve(dense[np.ix_(dofs, dofs)], r[dofs])
    np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-12)


def test_variants_coincide_single_subdomain(rng):
    grid = make_grid((6, 6))
    mat = jacobian_matrix(grid, rng)
    r = rng.standard_normal(mat.shape[0])
    outs = []
    for variant in SchwarzVariant:
        pre = make_precond(grid, mat, 1, 1, variant, "ilu0")
        outs.append(pre.apply(r))
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_reuse_keeps_factors_and_still_converges(rng):
    grid = make_grid((8, 8))
    mat = jacobian_matrix(grid, rng, dt=1e-3)
    dec = partition(grid, 4, 1)
    pre = SchwarzPreconditioner(dec, SchwarzVariant.LEFT_RAS, SubdomainSolverSpec("ilu", 0))
    assert pre.update(mat) is True
    assert pre.factorization_count == 1
    # slightly different matrix, reused factorization
    mat2 = jacobian_matrix(grid, rng, dt=1.02e-3)
    assert pre.update(mat2, reuse=True) is False
    assert pre.factorization_count == 1
    b = rng.standard_normal(mat2.shape[0])
    res = gmres(mat2.matvec, b, precond=pre, rel_tol=1e-8, abs_tol=1e-14)
    assert res.converged
    assert np.linalg.norm(b - mat2.matvec(res.x)) <= max(1e-8 * np.linalg.norm(b), 1e-14)


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

def test_gmres_identity_one_iteration(rng):
    b = rng.standard_normal(40)
    res = gmres(lambda x: x, b, rel_tol=1e-12)
    assert res.converged and res.iterations == 1
    np.testing.assert_allclose(res.x, b, rtol=1e-12, atol=1e-14)


def test_gmres_zero_rhs():
    res = gmres(lambda x: 2 * x, np.zeros(10))
    assert res.converged and res.iterations == 0
    assert np.all(res.x == 0.0)


def test_gmres_matches_dense_solve(rng):
    n = 50
    a = rng.standard_normal((n, n)) + 6.0 * np.eye(n)
    b = rng.standard_normal(n)
    res = gmres(lambda x: a @ x, b, rel_tol=1e-10, abs_tol=0.0, restart=60)
    assert res.converged
    expect = np.linalg.solve(a, b)
    np.testing.assert_allclose(res.x, expect, rtol=1e-6, atol=1e-10)
    assert np.linalg.norm(b - a @ res.x) <= 1e-10 * np.linalg.norm(b)


def test_gmres_ill_conditioned_true_residual(rng):
    # full-length Krylov space: plain restarted GMRES would stagnate at this
    # conditioning without a preconditioner
    d = np.logspace(0, 6, 64)
    b = rng.standard_normal(64)
    res = gmres(lambda x: d * x, b, rel_tol=1e-8, abs_tol=0.0, restart=70, max_iterations=500)
    assert res.converged
    true_res = np.linalg.norm(b - d * res.x)
    assert true_res <= 1e-8 * np.linalg.norm(b)
    assert res.residual_norm == pytest.approx(true_res, rel=1e-12)


def test_gmres_restart_path(rng):
    n = 80
    d = np.linspace(1.0, 300.0, n)
    rot = np.eye(n) + np.diag(0.4 * np.ones(n - 1), 1)
    a = rot * d
    b = rng.standard_normal(n)
    res = gmres(lambda x: a @ x, b, rel_tol=1e-9, abs_tol=0.0, restart=15, max_iterations=400)
    assert res.converged
    assert res.iterations > 15  # exercised at least one restart
    assert np.linalg.norm(b - a @ res.x) <= 1e-9 * np.linalg.norm(b)


def test_gmres_iteration_cap(rng):
    d = np.logspace(0, 8, 128)
    b = rng.standard_normal(128)
    res = gmres(lambda x: d * x, b, rel_tol=1e-12, abs_tol=0.0, restart=10, max_iterations=20)
    assert not res.converged
    assert res.iterations == 20
