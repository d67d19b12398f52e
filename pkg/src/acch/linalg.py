"""Sparse linear algebra: block stencil matrices, overlapping domain
decomposition, Schwarz preconditioners with ILU(k)/LU subdomain solves, and
restarted GMRES with right preconditioning.

Unknowns are interleaved (u, v) per cell with cells ordered x-fastest, so a
block row of a :class:`StencilMatrix` corresponds to one grid cell.  All
Schwarz combination steps run in fixed subdomain order, which makes every
solve bitwise reproducible for a fixed decomposition, independent of how
many worker threads execute the subdomain solves.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import splu

from . import _ilu
from .exceptions import PartitionError, ZeroPivotError
from .grid import BoundaryCondition, Grid
from .parallel import WorkerPool

BLOCK = 2  # unknowns per cell


# ---------------------------------------------------------------------------
# block sparse matrix
# ---------------------------------------------------------------------------

@dataclass
class StencilMatrix:
    """Block-compressed sparse rows of (cell column, 2x2 block) pairs."""

    n_cells: int
    indptr: np.ndarray
    indices: np.ndarray
    blocks: np.ndarray
    _bsr: sparse.bsr_matrix | None = field(default=None, init=False, repr=False, compare=False)
    _csr: sparse.csr_matrix | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (BLOCK * self.n_cells, BLOCK * self.n_cells)

    @property
    def n_blocks(self) -> int:
        return len(self.indices)

    def to_bsr(self) -> sparse.bsr_matrix:
        if self._bsr is None:
            self._bsr = sparse.bsr_matrix(
                (self.blocks, self.indices, self.indptr), shape=self.shape
            )
        return self._bsr

    def to_csr(self) -> sparse.csr_matrix:
        if self._csr is None:
            csr = self.to_bsr().tocsr()
            csr.sort_indices()
            self._csr = csr
        return self._csr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_bsr() @ x

    def restrict_cells(self, cells: np.ndarray) -> "StencilMatrix":
        """Principal block submatrix on the given (sorted) cell subset."""
        cells = np.asarray(cells, dtype=np.int64)
        counts = self.indptr[cells + 1] - self.indptr[cells]
        total = int(counts.sum())
        cum = np.zeros(len(cells) + 1, dtype=np.int64)
        np.cumsum(counts, out=cum[1:])
        entry = np.arange(total, dtype=np.int64) + np.repeat(self.indptr[cells] - cum[:-1], counts)
        lookup = np.full(self.n_cells, -1, dtype=np.int64)
        lookup[cells] = np.arange(len(cells), dtype=np.int64)
        local_cols = lookup[self.indices[entry]]
        keep = local_cols >= 0
        row_ids = np.repeat(np.arange(len(cells), dtype=np.int64), counts)[keep]
        new_counts = np.bincount(row_ids, minlength=len(cells))
        new_indptr = np.zeros(len(cells) + 1, dtype=np.int64)
        np.cumsum(new_counts, out=new_indptr[1:])
        return StencilMatrix(
            len(cells), new_indptr, local_cols[keep], self.blocks[entry[keep]]
        )

    def validate(self) -> None:
        """Check sorted unique columns per row and a symmetric block pattern."""
        for i in range(self.n_cells):
            cols = self.indices[self.indptr[i]:self.indptr[i + 1]]
            if len(cols) and np.any(np.diff(cols) <= 0):
                raise ValueError(f"block row {i} has unsorted or duplicate columns")
        ones = sparse.csr_matrix(
            (np.ones(self.n_blocks), self.indices, self.indptr),
            shape=(self.n_cells, self.n_cells),
        )
        pattern_t = ones.T.tocsr()
        pattern_t.sort_indices()
        if not (
            np.array_equal(ones.indptr, pattern_t.indptr)
            and np.array_equal(ones.indices, pattern_t.indices)
        ):
            raise ValueError("block sparsity pattern is not symmetric")


def interleave_dofs(cells: np.ndarray) -> np.ndarray:
    """Scalar dof indices (2 per cell, interleaved) for sorted cell ids."""
    cells = np.asarray(cells, dtype=np.int64)
    dofs = np.empty(BLOCK * len(cells), dtype=np.int64)
    dofs[0::2] = BLOCK * cells
    dofs[1::2] = BLOCK * cells + 1
    return dofs


# ---------------------------------------------------------------------------
# domain decomposition
# ---------------------------------------------------------------------------

@dataclass
class Decomposition:
    """Overlapping Cartesian decomposition of a structured grid.

    ``owned_cells`` tiles the grid exactly; ``extended_cells`` adds ``overlap``
    mesh layers per side, wrapped for periodic boundaries and clipped at
    Neumann walls.  All index arrays are sorted flat cell ids.
    """

    grid: Grid
    n_subdomains: int
    overlap: int
    owned_cells: list[np.ndarray]
    extended_cells: list[np.ndarray]
    owned_in_extended: list[np.ndarray]


def _factor_tuples(n: int, dims: int):
    if dims == 1:
        yield (n,)
        return
    for d in range(1, n + 1):
        if n % d == 0:
            for rest in _factor_tuples(n // d, dims - 1):
                yield (d, *rest)


def _flat_ids(grid: Grid, axis_indices: list[np.ndarray]) -> np.ndarray:
    """Sorted flat cell ids of the box spanned by sorted per-axis indices."""
    counts = grid.counts
    if grid.dim == 2:
        ix, iy = axis_indices
        return (iy[:, None] * counts[0] + ix[None, :]).ravel()
    ix, iy, iz = axis_indices
    return (
        (iz[:, None, None] * counts[1] + iy[None, :, None]) * counts[0] + ix[None, None, :]
    ).ravel()


def partition(grid: Grid, n_subdomains: int, overlap: int) -> Decomposition:
    """Split the grid into near-cubical boxes and extend them by ``overlap``."""
    if n_subdomains < 1:
        raise PartitionError("need at least one subdomain")
    if overlap < 0:
        raise PartitionError("overlap must be nonnegative")

    best = None
    for f in _factor_tuples(n_subdomains, grid.dim):
        if any(f[a] > grid.counts[a] for a in range(grid.dim)):
            continue
        edges = [grid.counts[a] / f[a] for a in range(grid.dim)]
        score = max(edges) / min(edges)
        if best is None or (score, f) < best[:2]:
            best = (score, f)
    if best is None:
        raise PartitionError(
            f"cannot split {grid.counts} into {n_subdomains} boxes of at least one cell"
        )
    factors = best[1]

    splits = []
    for a in range(grid.dim):
        n, p = grid.counts[a], factors[a]
        sizes = np.full(p, n // p, dtype=np.int64)
        sizes[: n % p] += 1
        ends = np.cumsum(sizes)
        starts = ends - sizes
        splits.append(list(zip(starts, ends)))

    periodic = grid.bc is BoundaryCondition.PERIODIC
    owned, extended, owned_pos = [], [], []
    box_grid = np.ndindex(*reversed(factors))  # z slowest, x fastest
    for rev_idx in box_grid:
        idx = tuple(reversed(rev_idx))
        own_axes, ext_axes = [], []
        for a in range(grid.dim):
            lo, hi = splits[a][idx[a]]
            own_axes.append(np.arange(lo, hi, dtype=np.int64))
            if periodic:
                ext = np.unique(np.arange(lo - overlap, hi + overlap) % grid.counts[a])
            else:
                ext = np.arange(max(lo - overlap, 0), min(hi + overlap, grid.counts[a]))
            ext_axes.append(ext.astype(np.int64))
        own = _flat_ids(grid, own_axes)
        ext = _flat_ids(grid, ext_axes)
        owned.append(own)
        extended.append(ext)
        owned_pos.append(np.searchsorted(ext, own))
    return Decomposition(grid, n_subdomains, overlap, owned, extended, owned_pos)


# ---------------------------------------------------------------------------
# subdomain solvers and Schwarz preconditioners
# ---------------------------------------------------------------------------

class SchwarzVariant(enum.Enum):
    CLASSICAL = "asm"
    LEFT_RAS = "ras-left"
    RIGHT_RAS = "ras-right"


@dataclass(frozen=True)
class SubdomainSolverSpec:
    """Subdomain solve: incomplete LU with a fill level, or exact sparse LU."""

    kind: str  # "ilu" or "lu"
    fill_level: int = 0

    def __post_init__(self):
        if self.kind not in ("ilu", "lu"):
            raise ValueError(f"unknown subdomain solver kind {self.kind!r}")
        if self.kind == "ilu" and self.fill_level < 0:
            raise ValueError("fill level must be nonnegative")

    @classmethod
    def from_string(cls, text: str) -> "SubdomainSolverSpec":
        text = text.strip().lower()
        if text == "lu":
            return cls("lu")
        if text.startswith("ilu") and text[3:].isdigit():
            return cls("ilu", int(text[3:]))
        raise ValueError(f"unknown subdomain solver {text!r} (use ilu0/ilu1/ilu2/lu)")

    def __str__(self):
        return "lu" if self.kind == "lu" else f"ilu{self.fill_level}"


class _IluPattern:
    """Cached scalar fill pattern for one subdomain."""

    def __init__(self, sub: StencilMatrix, fill_level: int):
        bi, bj = _ilu.symbolic_fill(sub.indptr, sub.indices, fill_level)
        self.indptr, self.indices = _ilu.expand_block_pattern(bi, bj, BLOCK)
        self.diag_pos = _ilu.diagonal_positions(self.indptr, self.indices)
        n_scalar = BLOCK * sub.n_cells
        self._keys = (
            np.repeat(np.arange(n_scalar, dtype=np.int64), np.diff(self.indptr))
            * n_scalar
            + self.indices
        )
        self.n_scalar = n_scalar
        self.entry_map: np.ndarray | None = None

    def map_entries(self, csr: sparse.csr_matrix) -> np.ndarray:
        if self.entry_map is None or len(self.entry_map) != csr.nnz:
            rows = np.repeat(np.arange(csr.shape[0], dtype=np.int64), np.diff(csr.indptr))
            keys = rows * self.n_scalar + csr.indices
            self.entry_map = np.searchsorted(self._keys, keys)
        return self.entry_map


class _IluFactor:
    def __init__(self, pattern: _IluPattern, data: np.ndarray):
        self.pattern = pattern
        self.data = data

    def solve(self, b: np.ndarray) -> np.ndarray:
        out = np.empty_like(b)
        _ilu.solve_factored(
            self.pattern.indptr, self.pattern.indices, self.data, self.pattern.diag_pos, b, out
        )
        return out


class _LuFactor:
    def __init__(self, csr: sparse.csr_matrix):
        self._lu = splu(csr.tocsc())

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(b)


def ilu_factor(sub: StencilMatrix, fill_level: int, pattern: _IluPattern | None = None,
               cells: np.ndarray | None = None) -> _IluFactor:
    """ILU(fill_level) of a subdomain matrix on its block fill pattern.

    ``cells`` (global ids of the subdomain cells) is only used to report zero
    pivots in grid terms.
    """
    if pattern is None:
        pattern = _IluPattern(sub, fill_level)
    csr = sub.to_csr()
    data = np.zeros(len(pattern.indices))
    data[pattern.map_entries(csr)] = csr.data
    bad = _ilu.factor_inplace(pattern.indptr, pattern.indices, data, pattern.diag_pos)
    if bad >= 0:
        cell = int(bad) // BLOCK
        if cells is not None:
            cell = int(cells[cell])
        raise ZeroPivotError(cell, int(bad) % BLOCK)
    return _IluFactor(pattern, data)


def lu_factor(sub: StencilMatrix) -> _LuFactor:
    """Exact sparse LU (with partial pivoting) of the scalar expansion."""
    return _LuFactor(sub.to_csr())


class SchwarzPreconditioner:
    """Additive Schwarz preconditioner in classical, left-RAS or right-RAS form.

    classical : restrict to the extended subdomain, solve, extend with zeros
        and sum the overlapping contributions.
    left-RAS : solve on the extended subdomain but scatter only the owned
        (non-overlapping) portion of each local solution.
    right-RAS : restrict the input to the owned cells (zero padded on the
        overlap), solve on the extended subdomain, scatter everything.
    """

    def __init__(
        self,
        decomposition: Decomposition,
        variant: SchwarzVariant,
        subsolver: SubdomainSolverSpec,
        pool: WorkerPool | None = None,
    ):
        self.decomposition = decomposition
        self.variant = variant
        self.subsolver = subsolver
        self.pool = pool if pool is not None else WorkerPool(1)
        self._ext_dofs = [interleave_dofs(c) for c in decomposition.extended_cells]
        self._own_dofs = [interleave_dofs(c) for c in decomposition.owned_cells]
        self._own_pos = [interleave_dofs(p) for p in decomposition.owned_in_extended]
        self._patterns: list[_IluPattern | None] = [None] * decomposition.n_subdomains
        self._factors: list | None = None
        self.factorization_count = 0

    def invalidate(self) -> None:
        """Drop the current factors; the next update() refactors."""
        self._factors = None

    def update(self, matrix: StencilMatrix, reuse: bool = False) -> bool:
        """(Re)factor the subdomain matrices; with reuse, keep existing factors.

        Returns True when a factorization actually happened.
        """
        if reuse and self._factors is not None:
            return False

        def factor_one(k: int):
            cells = self.decomposition.extended_cells[k]
            sub = matrix.restrict_cells(cells)
            if self.subsolver.kind == "lu":
                return lu_factor(sub)
            if self._patterns[k] is None:
                self._patterns[k] = _IluPattern(sub, self.subsolver.fill_level)
            return ilu_factor(sub, self.subsolver.fill_level, self._patterns[k], cells)

        self._factors = self.pool.map(factor_one, range(self.decomposition.n_subdomains))
        self.factorization_count += 1
        return True

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self._factors is None:
            raise RuntimeError("preconditioner has no factorization; call update() first")

        right = self.variant is SchwarzVariant.RIGHT_RAS

        def solve_one(k: int) -> np.ndarray:
            if right:
                rk = np.zeros(len(self._ext_dofs[k]))
                rk[self._own_pos[k]] = r[self._own_dofs[k]]
            else:
                rk = r[self._ext_dofs[k]]
            return self._factors[k].solve(rk)

        parts = self.pool.map(solve_one, range(self.decomposition.n_subdomains))
        out = np.zeros_like(r)
        if self.variant is SchwarzVariant.LEFT_RAS:
            for k, yk in enumerate(parts):
                out[self._own_dofs[k]] = yk[self._own_pos[k]]
        else:
            for k, yk in enumerate(parts):
                out[self._ext_dofs[k]] += yk
        return out


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float


def gmres(
    matvec,
    b: np.ndarray,
    precond=None,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-14,
    restart: int = 30,
    max_iterations: int = 500,
    x0: np.ndarray | None = None,
) -> GmresResult:
    """Restarted GMRES with right preconditioning and modified Gram-Schmidt.

    Solves A M^-1 y = b and returns x = M^-1 y.  The stopping rule
    ||b - A x|| <= max(rel_tol ||b||, abs_tol) is always re-verified on the
    explicitly recomputed true residual, never on the Arnoldi estimate alone.
    One reorthogonalization pass is applied when the basis vector loses more
    than half of its norm during orthogonalization.
    """
    apply_m = precond.apply if hasattr(precond, "apply") else (precond or (lambda v: v))
    n = b.size
    tol = max(rel_tol * float(np.linalg.norm(b)), abs_tol)

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.astype(float).copy()
        r = b - matvec(x)

    total = 0
    res_norm = float(np.linalg.norm(r))
    while True:
        if res_norm <= tol:
            return GmresResult(x, total, True, res_norm)
        if total >= max_iterations:
            return GmresResult(x, total, False, res_norm)

        v = np.zeros((restart + 1, n))
        h = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        v[0] = r / res_norm
        g[0] = res_norm
        j = 0
        breakdown = False
        while j < restart and total < max_iterations:
            # copy: matvec/preconditioner may return their input (identity),
            # and the Gram-Schmidt update below modifies w in place
            w = np.array(matvec(apply_m(v[j])), dtype=float)
            norm_before = float(np.linalg.norm(w))
            for i in range(j + 1):
                h[i, j] = np.dot(v[i], w)
                w -= h[i, j] * v[i]
            norm_after = float(np.linalg.norm(w))
            if norm_after < 0.5 * norm_before:
                for i in range(j + 1):
                    corr = np.dot(v[i], w)
                    h[i, j] += corr
                    w -= corr * v[i]
                norm_after = float(np.linalg.norm(w))
            h[j + 1, j] = norm_after
            total += 1

            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = np.hypot(h[j, j], h[j + 1, j])
            if denom == 0.0:
                # column contributes nothing; leave it out of the LS solve
                breakdown = True
                break
            cs[j] = h[j, j] / denom
            sn[j] = h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j += 1

            if norm_after == 0.0:
                breakdown = True
                break
            v[j] = w / norm_after
            if abs(g[j]) <= tol:
                break

        if j > 0:
            y = solve_triangular(h[:j, :j], g[:j], lower=False)
            x = x + apply_m(v[:j].T @ y)
        r = b - matvec(x)
        res_norm = float(np.linalg.norm(r))
        if breakdown and res_norm > tol:
            # exact breakdown with a residual that still fails the rule
            return GmresResult(x, total, False, res_norm)
