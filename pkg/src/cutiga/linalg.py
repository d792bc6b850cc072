"""Symmetric matrix services: LDL^T factorization, constrained solves and
scaled-condition-number estimation (dense below a size threshold, Lanczos
above it)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_EIG_LIMIT = 12000


class PivotError(ValueError):
    """Nonpositive pivot encountered in a factorization expected to be SPD."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"nonpositive pivot {value:.3e} at index {index}")


@dataclass(frozen=True)
class SymMatrix:
    """Thin view over a symmetric matrix (dense array or scipy sparse)."""

    data: object

    def __post_init__(self):
        n, m = self.data.shape
        if n != m or n < 1:
            raise ValueError("matrix must be square and nonempty")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def to_dense(self) -> np.ndarray:
        if sp.issparse(self.data):
            return self.data.toarray()
        return np.asarray(self.data, float)

    def check_symmetric(self, rtol=1e-12):
        A = self.data
        if sp.issparse(A):
            err = abs(A - A.T).max()
            scale = abs(A).max()
        else:
            err = np.max(np.abs(A - A.T))
            scale = np.max(np.abs(A))
        if err > rtol * max(scale, 1e-300):
            raise ValueError(f"matrix not symmetric: |A-A^T|max = {err:.3e}")
        return self


@dataclass(frozen=True)
class SpectrumSummary:
    lam_max: float
    lam_min: float
    lam_min_kept: float   # smallest eigenvalue after the configured drops
    scn: float
    method: str           # 'dense' | 'iterative'
    residual: float = 0.0

    def __post_init__(self):
        if not (self.lam_max >= self.lam_min_kept >= self.lam_min - 1e-30):
            raise ValueError("eigenvalue ordering violated")


def _as_dense(M) -> np.ndarray:
    if isinstance(M, SymMatrix):
        return M.to_dense()
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, float)


def ldlt(M, drop_tol: float | None = None):
    """Factor a symmetric positive-definite matrix as L D L^T.

    Returns (L, d) with L unit lower triangular and d the positive diagonal
    (no pivoting, so the factorization is the unique one). With drop_tol set,
    columns whose pivot falls below drop_tol times the largest pivot seen so
    far are dropped instead of failing; the return is then (L, d, kept) over
    the retained index set.
    """
    A = _as_dense(M)
    if drop_tol is None:
        try:
            C = sla.cholesky(A, lower=True, check_finite=False)
        except sla.LinAlgError:
            _ldlt_loop(A, drop_tol=None)  # raises PivotError with the index
            raise
        dc = np.diag(C).copy()
        return C / dc[None, :], dc**2
    return _ldlt_loop(A, drop_tol)


def _ldlt_loop(M, drop_tol):
    """Right-looking elimination; dropped columns are simply skipped."""
    A = _as_dense(M).copy()
    n = A.shape[0]
    L = np.zeros((n, n))
    d = np.zeros(n)
    keep = []
    dmax = float(np.max(np.diag(A)))
    for j in range(n):
        piv = A[j, j]
        thresh = drop_tol * dmax if drop_tol is not None else 0.0
        if piv <= thresh:
            if drop_tol is None:
                raise PivotError(j, float(piv))
            continue
        d[j] = piv
        dmax = max(dmax, piv)
        L[j, j] = 1.0
        if j < n - 1:
            l = A[j + 1 :, j] / piv
            L[j + 1 :, j] = l
            A[j + 1 :, j + 1 :] -= np.outer(l, A[j + 1 :, j])
        keep.append(j)
    keep_arr = np.array(keep, dtype=int)
    Lk = L[np.ix_(keep_arr, keep_arr)]
    dk = d[keep_arr]
    if drop_tol is None:
        return Lk, dk
    return Lk, dk, keep_arr


def ldlt_solve(L: np.ndarray, d: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = sla.solve_triangular(L, b, lower=True, unit_diagonal=True)
    y /= d
    return sla.solve_triangular(L.T, y, lower=False, unit_diagonal=True)


def solve_constrained(K, F: np.ndarray, constraint: np.ndarray, target: float = 0.0):
    """Solve the bordered system [[K, c], [c^T, 0]] [u; lam] = [F; target].

    Returns (u, lam). K may be dense, sparse or SymMatrix; the constraint
    removes a one-dimensional nullspace (or is inert on SPD systems).
    """
    c = np.asarray(constraint, float)
    if not np.any(c):
        raise ValueError("constraint vector is identically zero")
    n = c.size
    if isinstance(K, SymMatrix):
        K = K.data
    if sp.issparse(K):
        B = sp.bmat([[K, c[:, None]], [c[None, :], None]], format="csc")
        sol = spla.spsolve(B, np.concatenate([F, [target]]))
    else:
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = K
        B[:n, n] = c
        B[n, :n] = c
        sol = sla.solve(B, np.concatenate([F, [target]]), assume_a="sym")
    u, lam = sol[:n], sol[n]
    if not np.all(np.isfinite(u)):
        raise ValueError("bordered system is singular")
    return u, lam


def scn(K, drop_smallest: int = 1, tol: float = 1e-8,
        dense_limit: int | None = None) -> SpectrumSummary:
    """Scaled condition number of a unit-diagonal symmetric matrix.

    Dense symmetric eigensolve up to `dense_limit` rows (DENSE_EIG_LIMIT by
    default); beyond that the extreme eigenvalues come from Lanczos (largest
    directly, smallest few by shift-invert).
    """
    if isinstance(K, SymMatrix):
        K = K.data
    n = K.shape[0]
    k_low = drop_smallest + 1
    limit = DENSE_EIG_LIMIT if dense_limit is None else dense_limit
    if n <= max(limit, k_low + 2):
        A = _as_dense(K)
        ev = np.sort(sla.eigvalsh(A))
        lam_max = float(ev[-1])
        lam_min = float(ev[0])
        lam_kept = float(ev[drop_smallest])
        method, residual = "dense", 0.0
    else:
        Ks = sp.csr_matrix(K) if not sp.issparse(K) else K.tocsr()
        lam_max = float(spla.eigsh(Ks, k=1, which="LA", tol=tol,
                                   return_eigenvectors=False)[0])
        shift = -1e-8 * lam_max
        low = spla.eigsh(Ks, k=k_low, sigma=shift, which="LM", tol=tol,
                         return_eigenvectors=False)
        low = np.sort(low)
        lam_min = float(low[0])
        lam_kept = float(low[drop_smallest])
        method, residual = "iterative", tol
    if lam_kept <= 0:
        raise ValueError(
            f"smallest retained eigenvalue {lam_kept:.3e} is nonpositive; "
            "adjacent enrichment functions are numerically dependent"
        )
    return SpectrumSummary(lam_max, lam_min, lam_kept, lam_max / lam_kept,
                           method, residual)
