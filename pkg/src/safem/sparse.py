"""Sparse matrices and the iteration kernels smoothers and solvers use.

Matrices are :class:`scipy.sparse.csr_matrix` in canonical form (sorted
column indices, duplicates summed).  The iteration kernels themselves are
implemented here.
"""

from __future__ import annotations

import warnings

import numba
import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SYMMETRY_TOL = 1e-10


class SolverError(RuntimeError):
    """Raised when an iteration produces non-finite values or fails to converge."""


def from_triplets(n_rows, n_cols, triplets=None, *, rows=None, cols=None, values=None):
    """Build a canonical CSR matrix, summing duplicate entries.

    Either pass ``triplets`` as an iterable of ``(row, col, value)`` or the
    three arrays separately.
    """
    if triplets is not None:
        t = list(triplets)
        rows = np.array([r for r, _, _ in t], dtype=np.int64)
        cols = np.array([c for _, c, _ in t], dtype=np.int64)
        values = np.array([v for _, _, v in t], dtype=float)
    rows = np.asarray(rows if rows is not None else [], dtype=np.int64).ravel()
    cols = np.asarray(cols if cols is not None else [], dtype=np.int64).ravel()
    values = np.asarray(values if values is not None else [], dtype=float).ravel()
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
        raise IndexError("row index out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("column index out of range")
    A = sp.csr_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
    A.sum_duplicates()
    A.sort_indices()
    return A


def matvec(A, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[1],):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


def is_symmetric(A, tol=SYMMETRY_TOL) -> bool:
    diff = A - A.T
    if diff.nnz == 0:
        return True
    scale = max(1.0, float(abs(A).max()))
    return float(abs(diff).max()) <= tol * scale


def _diagonal(A, *, require_nonzero=True):
    d = A.diagonal()
    if require_nonzero and np.any(d == 0):
        raise ZeroDivisionError("matrix has a zero diagonal entry")
    return d


@numba.njit(cache=True)
def _gs_forward(indptr, indices, data, rhs, x):
    n = rhs.shape[0]
    for i in range(n):
        s = rhs[i]
        d = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j == i:
                d = data[jj]
            else:
                s -= data[jj] * x[j]
        x[i] = s / d


def gauss_seidel(A, rhs, x):
    """One forward Gauss-Seidel sweep; returns a new vector."""
    _diagonal(A)
    out = np.array(x, dtype=float, copy=True)
    _gs_forward(A.indptr, A.indices, A.data, np.asarray(rhs, dtype=float), out)
    return out


def warmup() -> None:
    """Compile the Gauss-Seidel kernel so later timings exclude JIT cost."""
    A = sp.csr_matrix(np.ones((1, 1)))
    _gs_forward(A.indptr, A.indices, A.data, np.ones(1), np.zeros(1))


def richardson(A, rhs, x, omega):
    return x + omega * (rhs - A @ x)


def jacobi(A, rhs, x, omega=0.5, diagonal=None):
    d = _diagonal(A) if diagonal is None else diagonal
    return x + omega * (rhs - A @ x) / d


def stationary_sweep(kind, A, rhs, x, omega=None):
    """One sweep of ``richardson``, ``jacobi`` or ``gauss_seidel``."""
    if kind == "richardson":
        if omega is None:
            omega = 1.0 / estimate_lambda_max(A)
        return richardson(A, rhs, x, omega)
    if kind == "jacobi":
        return jacobi(A, rhs, x, 0.5 if omega is None else omega)
    if kind == "gauss_seidel":
        return gauss_seidel(A, rhs, x)
    raise ValueError(f"unknown sweep kind {kind!r}")


def estimate_lambda_max(A, iterations=20, seed=0):
    """Rayleigh-quotient estimate of the largest eigenvalue by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = A @ v
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return float(v @ (A @ v))


class ConjugateGradient:
    """Stepwise (preconditioned) conjugate gradient iteration for SPD ``A``.

    ``preconditioner`` is ``None`` or ``"jacobi"``.  Each :meth:`step` performs
    one CG iteration and returns the new iterate.
    """

    def __init__(self, A, rhs, x0, preconditioner=None):
        self.A = A
        self.x = np.array(x0, dtype=float, copy=True)
        if preconditioner is None:
            self._inv_diag = None
        elif preconditioner == "jacobi":
            d = _diagonal(A)
            if np.any(d <= 0):
                raise ValueError("Jacobi preconditioner needs a positive diagonal")
            self._inv_diag = 1.0 / d
        else:
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        self.r = np.asarray(rhs, dtype=float) - A @ self.x
        self.z = self._precondition(self.r)
        self.p = self.z.copy()
        self.rz = float(self.r @ self.z)
        self.iterations = 0

    def _precondition(self, r):
        return r if self._inv_diag is None else self._inv_diag * r

    def step(self):
        self.iterations += 1
        if self.rz == 0.0:
            return self.x.copy()
        Ap = self.A @ self.p
        pAp = float(self.p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0.0:
            if pAp == 0.0 and not self.p.any():
                return self.x.copy()
            raise SolverError("CG breakdown: matrix is not positive definite")
        alpha = self.rz / pAp
        self.x = self.x + alpha * self.p
        self.r = self.r - alpha * Ap
        if not np.all(np.isfinite(self.x)):
            raise SolverError("non-finite CG iterate")
        self.z = self._precondition(self.r)
        rz_new = float(self.r @ self.z)
        self.p = self.z + (rz_new / self.rz) * self.p
        self.rz = rz_new
        return self.x.copy()


def cg_solve(
    A,
    rhs,
    x0=None,
    preconditioner=None,
    max_iters=None,
    residual_tol=1e-12,
    callback=None,
):
    """(P)CG solve; returns ``(x, iteration_count)``.

    Stops when ``||rhs - A x|| <= residual_tol * ||rhs||``, after
    ``max_iters`` iterations, or when ``callback(x, k)`` returns True.
    """
    if not is_symmetric(A):
        raise ValueError("CG requires a symmetric matrix")
    n = A.shape[0]
    x0 = np.zeros(n) if x0 is None else x0
    max_iters = 10 * n if max_iters is None else max_iters
    cg = ConjugateGradient(A, rhs, x0, preconditioner)
    bnorm = np.linalg.norm(rhs)
    x = cg.x
    if bnorm == 0.0:
        return np.zeros(n), 0
    k = 0
    while k < max_iters:
        x = cg.step()
        k += 1
        if callback is not None and callback(x, k):
            break
        if np.linalg.norm(cg.r) <= residual_tol * bnorm:
            break
    return x, k


def direct_oracle_solve(A, rhs, rtol=1e-12):
    """Solve ``A x = rhs`` with a factorization (dense up to 2000 unknowns).

    Up to three steps of iterative refinement are applied while the relative
    residual exceeds ``rtol``.
    """
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    rhs = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(rhs)
    if n == 0:
        return np.zeros(0)
    if n <= 2000:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(A.toarray(), check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"singular matrix: {exc}") from exc
        if np.any(np.diag(lu[0]) == 0):
            raise SolverError("singular matrix")
        solve = lambda b: scipy.linalg.lu_solve(lu, b)  # noqa: E731
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                lu = spla.splu(A.tocsc())
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise SolverError(f"singular matrix: {exc}") from exc
        solve = lu.solve
    x = solve(rhs)
    for _ in range(3):
        if not np.all(np.isfinite(x)):
            raise SolverError("singular matrix")
        r = rhs - A @ x
        if np.linalg.norm(r) <= rtol * max(bnorm, np.finfo(float).tiny):
            return x
        x = x + solve(r)
    # rounding can keep the plain relative residual above rtol on large,
    # ill-conditioned systems; accept a normwise backward error below rtol
    r = rhs - A @ x
    anorm = float(abs(A).sum(axis=1).max())
    backward = np.abs(r).max() / (anorm * np.abs(x).max() + np.abs(rhs).max())
    if not backward <= rtol:
        raise SolverError("direct solve did not reach the requested residual")
    return x


def write_matrix_market(A, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="general")
