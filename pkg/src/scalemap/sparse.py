"""Sparse Cholesky factors for GMRF computations.

The numeric factorization comes from CHOLMOD (through scikit-sparse) when it
is importable, otherwise from SuperLU run without pivoting in natural order.
Either way the result is reduced to a lower-triangular CSC factor ``L`` of the
symmetrically permuted matrix, and every downstream operation (solves,
sampling, log-determinants, selected inversion) works on that factor.
"""

from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, analyze, cholesky

    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on system SuiteSparse
    HAVE_CHOLMOD = False


class FactorizationError(np.linalg.LinAlgError):
    pass


def fill_reducing_order(pattern: sp.spmatrix) -> np.ndarray:
    """Fill-reducing permutation for a symmetric pattern."""
    A = sp.csc_matrix(pattern, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if HAVE_CHOLMOD:
        A = abs(A) + sp.identity(n, format="csc")
        return np.asarray(analyze(A.tocsc(), ordering_method="amd").P(), dtype=np.int64)
    return np.asarray(csgraph.reverse_cuthill_mckee(A.tocsr(), symmetric_mode=True), dtype=np.int64)


@numba.njit(cache=True)
def _lsolve(indptr, indices, data, b):
    x = b.copy()
    n = len(indptr) - 1
    m = x.shape[1]
    for j in range(n):
        d = data[indptr[j]]
        for c in range(m):
            x[j, c] /= d
        for p in range(indptr[j] + 1, indptr[j + 1]):
            i = indices[p]
            v = data[p]
            for c in range(m):
                x[i, c] -= v * x[j, c]
    return x


@numba.njit(cache=True)
def _ltsolve(indptr, indices, data, b):
    x = b.copy()
    n = len(indptr) - 1
    m = x.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(indptr[j] + 1, indptr[j + 1]):
            i = indices[p]
            v = data[p]
            for c in range(m):
                x[j, c] -= v * x[i, c]
        d = data[indptr[j]]
        for c in range(m):
            x[j, c] /= d
    return x


@numba.njit(cache=True)
def _lookup(indptr, indices, S, row, col):
    lo = indptr[col]
    hi = indptr[col + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        r = indices[mid]
        if r == row:
            return S[mid]
        if r < row:
            lo = mid + 1
        else:
            hi = mid - 1
    return 0.0


@numba.njit(cache=True)
def _takahashi(indptr, indices, data):
    """Entries of inv(L L^T) on the pattern of L (Takahashi recursions)."""
    n = len(indptr) - 1
    S = np.zeros(len(data))
    for i in range(n - 1, -1, -1):
        start = indptr[i]
        end = indptr[i + 1]
        lii = data[start]
        for pj in range(end - 1, start - 1, -1):
            j = indices[pj]
            s = 0.0
            for pk in range(start + 1, end):
                k = indices[pk]
                if k >= j:
                    s += data[pk] * _lookup(indptr, indices, S, k, j)
                else:
                    s += data[pk] * _lookup(indptr, indices, S, j, k)
            if pj == start:
                S[pj] = 1.0 / (lii * lii) - s / lii
            else:
                S[pj] = -s / lii
    return S


class CholeskyFactor:
    """``Q[perm][:, perm] = L @ L.T`` with ``L`` lower-triangular CSC."""

    def __init__(self, L: sp.csc_matrix, perm: np.ndarray):
        L = sp.csc_matrix(L)
        L.sort_indices()
        self.L = L
        self.perm = np.asarray(perm, dtype=np.int64)
        self.iperm = np.empty_like(self.perm)
        self.iperm[self.perm] = np.arange(len(self.perm))
        self.n = L.shape[0]
        self._diag = L.data[L.indptr[:-1]]

    def logdet(self) -> float:
        return 2.0 * float(np.log(self._diag).sum())

    def _as2d(self, b):
        b = np.asarray(b, dtype=float)
        return (b[:, None] if b.ndim == 1 else b), b.ndim == 1

    def solve(self, b) -> np.ndarray:
        b2, vec = self._as2d(b)
        L = self.L
        y = _lsolve(L.indptr, L.indices, L.data, np.ascontiguousarray(b2[self.perm]))
        x = _ltsolve(L.indptr, L.indices, L.data, y)[self.iperm]
        return x[:, 0] if vec else x

    def solve_lt(self, z) -> np.ndarray:
        """``x`` with ``L^T x_perm = z``; for ``z ~ N(0, I)``, ``x ~ N(0, Q^{-1})``."""
        z2, vec = self._as2d(z)
        L = self.L
        x = _ltsolve(L.indptr, L.indices, L.data, np.ascontiguousarray(z2))[self.iperm]
        return x[:, 0] if vec else x

    def inverse_diagonal(self) -> np.ndarray:
        """Diagonal of ``Q^{-1}`` in the original ordering."""
        L = self.L
        S = _takahashi(L.indptr, L.indices, L.data)
        return S[L.indptr[:-1]][self.iperm]


def cholesky_factor(Q: sp.spmatrix, perm: np.ndarray | None = None) -> CholeskyFactor:
    """Factor symmetric positive definite ``Q`` after permuting by ``perm``."""
    Q = sp.csc_matrix(Q)
    if perm is None:
        perm = fill_reducing_order(Q)
    perm = np.asarray(perm, dtype=np.int64)
    return factor_permuted(Q[perm][:, perm].tocsc(), perm)


def factor_permuted(Qp: sp.csc_matrix, perm: np.ndarray) -> CholeskyFactor:
    """Factor ``Qp``, already symmetrically permuted by ``perm``, in natural order."""
    n = Qp.shape[0]
    if n == 0:
        return CholeskyFactor(sp.csc_matrix((0, 0)), perm)
    if HAVE_CHOLMOD:
        try:
            L = cholesky(Qp, ordering_method="natural", mode="simplicial").L()
        except CholmodNotPositiveDefiniteError as exc:
            raise FactorizationError(str(exc)) from exc
    else:  # pragma: no cover
        try:
            lu = spla.splu(
                Qp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        if not (np.array_equal(lu.perm_r, np.arange(n)) and np.array_equal(lu.perm_c, np.arange(n))):
            raise FactorizationError("SuperLU pivoted; matrix not positive definite?")
        d = lu.U.diagonal()
        if (d <= 0).any():
            raise FactorizationError("non-positive pivot")
        L = (lu.L @ sp.diags(np.sqrt(d))).tocsc()
    if not np.all(np.isfinite(L.data)):
        raise FactorizationError("non-finite Cholesky factor")
    return CholeskyFactor(L, perm)
