"""Incomplete LU kernels: level-of-fill symbolic phase and jitted numerics.

The symbolic phase runs on the block (cell) connectivity graph and is cached
per subdomain because the sparsity pattern never changes between time steps.
The numeric factorization and the triangular solves run on the scalar
expansion of that pattern (two unknowns per cell) inside numba kernels that
release the GIL, so subdomain solves can overlap on worker threads.
"""

from __future__ import annotations

from bisect import insort

import numpy as np
from numba import njit
from scipy import sparse


def symbolic_fill(indptr: np.ndarray, indices: np.ndarray, level: int):
    """Level-of-fill pattern of an ILU(level) factorization.

    Takes a square CSR pattern with sorted, unique column indices and returns
    the (indptr, indices) pattern augmented with every fill entry whose level
    is <= ``level``.  Structural entries have level 0 and a fill created by
    eliminating column k has level lev(i,k) + lev(k,j) + 1.
    """
    if level == 0:
        return indptr.copy(), indices.copy()
    n = len(indptr) - 1
    rows_cols: list[np.ndarray] = []
    rows_levs: list[np.ndarray] = []
    out_indptr = np.zeros(n + 1, dtype=indptr.dtype)
    for i in range(n):
        cols = {int(c): 0 for c in indices[indptr[i]:indptr[i + 1]]}
        order = sorted(cols)
        ptr = 0
        while ptr < len(order):
            k = order[ptr]
            ptr += 1
            if k >= i:
                break
            lev_ik = cols[k]
            if lev_ik >= level:
                continue
            kcols = rows_cols[k]
            klevs = rows_levs[k]
            upper = np.searchsorted(kcols, k + 1)
            for j, lev_kj in zip(kcols[upper:], klevs[upper:]):
                cand = lev_ik + int(lev_kj) + 1
                if cand > level:
                    continue
                j = int(j)
                if j in cols:
                    if cand < cols[j]:
                        cols[j] = cand
                else:
                    cols[j] = cand
                    insort(order, j)
        carr = np.fromiter(sorted(cols), dtype=indices.dtype, count=len(cols))
        rows_cols.append(carr)
        rows_levs.append(np.fromiter((cols[int(c)] for c in carr), dtype=np.int32, count=len(carr)))
        out_indptr[i + 1] = out_indptr[i] + len(carr)
    out_indices = np.concatenate(rows_cols) if rows_cols else indices[:0]
    return out_indptr, out_indices


def expand_block_pattern(indptr: np.ndarray, indices: np.ndarray, block: int = 2):
    """Scalar CSR pattern of the block pattern expanded by dense b x b blocks."""
    n = len(indptr) - 1
    ones = np.ones(len(indices))
    p = sparse.csr_matrix((ones, indices, indptr), shape=(n, n))
    s = sparse.kron(p, np.ones((block, block)), format="csr")
    s.sort_indices()
    return s.indptr.astype(np.int64), s.indices.astype(np.int64)


def diagonal_positions(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Position of each diagonal entry inside the CSR data array."""
    n = len(indptr) - 1
    pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        j = lo + np.searchsorted(indices[lo:hi], i)
        if j >= hi or indices[j] != i:
            raise ValueError(f"pattern is missing the diagonal entry of row {i}")
        pos[i] = j
    return pos


@njit(cache=True, nogil=True)
def factor_inplace(indptr, indices, data, diag_pos):
    """Pattern-restricted ILU factorization, L and U stored over the pattern.

    L has unit diagonal (entries left of the diagonal hold L, the rest U).
    Returns -1 on success or the scalar row index of a zero pivot.
    """
    n = len(indptr) - 1
    colmap = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        s = indptr[i]
        e = indptr[i + 1]
        for t in range(s, e):
            colmap[indices[t]] = t
        for t in range(s, e):
            k = indices[t]
            if k >= i:
                break
            dk = data[diag_pos[k]]
            lik = data[t] / dk
            data[t] = lik
            for tt in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = colmap[indices[tt]]
                if pos >= 0:
                    data[pos] -= lik * data[tt]
        dpos = colmap[i]
        for t in range(s, e):
            colmap[indices[t]] = -1
        if dpos < 0 or abs(data[dpos]) < 1e-300:
            return i
    return -1


@njit(cache=True, nogil=True)
def solve_factored(indptr, indices, data, diag_pos, b, out):
    """Solve L U x = b with the combined factor layout of factor_inplace."""
    n = len(b)
    for i in range(n):
        acc = b[i]
        for t in range(indptr[i], diag_pos[i]):
            acc -= data[t] * out[indices[t]]
        out[i] = acc
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for t in range(diag_pos[i] + 1, indptr[i + 1]):
            acc -= data[t] * out[indices[t]]
        out[i] = acc / data[diag_pos[i]]
    return out
