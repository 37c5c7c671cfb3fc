"""Complex dense solvers used by the detectors and baselines.

Everything funnels through a hand-rolled complex Cholesky factorization so
failures carry the offending pivot index and results are reproducible for a
fixed backend.  The JIT path uses explicit loops (left-to-right sums); the
numpy path vectorizes by column.  Both satisfy the same residual contracts.
"""

import numpy as np

from .backend import USE_NUMBA, jit_kernel
from .errors import DecompositionError, InputError, NumericError, RankDeficiencyError


def _chol_factor_loops(a, tol):
    """Lower Cholesky of hermitian a. Returns (L, pivot): pivot = -1 on
    success, else the first column whose pivot fell below tol."""
    n = a.shape[0]
    L = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        s = 0.0
        for k in range(j):
            s += (L[j, k] * np.conj(L[j, k])).real
        d = a[j, j].real - s
        if d <= tol:
            return L, j
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            acc = a[i, j]
            for k in range(j):
                acc -= L[i, k] * np.conj(L[j, k])
            L[i, j] = acc / L[j, j]
    return L, -1


def _chol_solve_loops(L, b):
    """Solve L L^H x = b given the lower factor."""
    n = L.shape[0]
    y = np.zeros(n, dtype=np.complex128)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    x = np.zeros(n, dtype=np.complex128)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(i + 1, n):
            acc -= np.conj(L[k, i]) * x[k]
        x[i] = acc / L[i, i].real
    return x


def _chol_factor_vec(a, tol):
    n = a.shape[0]
    L = np.zeros((n, n), dtype=np.complex128)
    for j in range(n):
        row = L[j, :j]
        d = a[j, j].real - np.real(row @ np.conj(row))
        if d <= tol:
            return L, j
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ np.conj(row)) / L[j, j]
    return L, -1


def _chol_solve_vec(L, b):
    n = L.shape[0]
    y = np.zeros(n, dtype=np.complex128)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros(n, dtype=np.complex128)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - np.conj(L[i + 1:, i]) @ x[i + 1:]) / L[i, i].real
    return x


if USE_NUMBA:
    _chol_factor = jit_kernel(_chol_factor_loops)
    _chol_solve = jit_kernel(_chol_solve_loops)
else:
    _chol_factor = _chol_factor_vec
    _chol_solve = _chol_solve_vec

# exported for the backend benchmark
chol_factor_py = _chol_factor_vec
chol_factor_loops_py = _chol_factor_loops


def hermitian_posdef_solve(h: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve H x = b for hermitian positive definite H.

    Raises DecompositionError when a pivot is nonpositive.  Inputs are never
    mutated; relative residual is < 1e-10 for well-posed systems.
    """
    h = np.asarray(h, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InputError(f"H must be square, got {h.shape}")
    if b.shape != (h.shape[0],):
        raise InputError(f"b has shape {b.shape}, expected ({h.shape[0]},)")
    L, pivot = _chol_factor(np.ascontiguousarray(h), 0.0)
    if pivot >= 0:
        raise DecompositionError(
            f"matrix is not positive definite (pivot {pivot} <= 0)")
    x = _chol_solve(L, np.ascontiguousarray(b))
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite solution from hermitian solve")
    return x


def regularized_normal_solve(a: np.ndarray, b: np.ndarray,
                             reg: float = 0.0) -> np.ndarray:
    """Minimize ||A x - b||^2 + reg ||x||^2 via the normal equations
    (A^H A + reg I) x = A^H b, factored by Cholesky.

    reg = 0 on a rank-deficient system raises RankDeficiencyError naming the
    offending pivot.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError(f"A must be a nonempty 2-D matrix, got {a.shape}")
    if b.shape != (a.shape[0],):
        raise InputError(f"b has shape {b.shape}, expected ({a.shape[0]},)")
    if reg < 0:
        raise InputError(f"reg must be nonnegative, got {reg}")
    gram = np.conj(a.T) @ a
    if reg > 0:
        gram = gram + reg * np.eye(a.shape[1])
    rhs = np.conj(a.T) @ b
    # singularity threshold scaled to the problem
    tol = 0.0 if reg > 0 else a.shape[1] * np.finfo(np.float64).eps * max(
        np.max(np.abs(np.diag(gram)).real), np.finfo(np.float64).tiny)
    L, pivot = _chol_factor(np.ascontiguousarray(gram), tol)
    if pivot >= 0:
        if reg == 0:
            raise RankDeficiencyError(pivot, float(gram[pivot, pivot].real))
        raise DecompositionError(
            f"regularized normal equations not positive definite "
            f"(pivot {pivot})")
    x = _chol_solve(L, np.ascontiguousarray(rhs))
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite solution from normal equations")
    return x
