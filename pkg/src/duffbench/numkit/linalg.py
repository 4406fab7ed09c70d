"""Dense SPD linear algebra: Cholesky factorization, solves, log-dets.

Matrices are plain float64 numpy arrays in row-major layout. A
successful factorization is the package's certificate that a matrix is
symmetric positive definite; `FactorizationError` is raised otherwise
so callers can decide whether to add jitter.
"""

from __future__ import annotations

import numpy as np

from . import tape as tp


class FactorizationError(Exception):
    """Cholesky hit a non-positive pivot: matrix not positive definite."""


class CholeskyFactor:
    """Lower-triangular factor L with A = L Lᵀ."""

    def __init__(self, L):
        self.L = L

    @property
    def log_det(self):
        """log|A| from the factor diagonal."""
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b):
        """x with A x = b; b may be a vector or a matrix of columns."""
        y = solve_lower(self.L, b)
        return solve_upper(self.L.T, y)

    def half_solve(self, b):
        """L⁻¹ b, the whitening transform."""
        return solve_lower(self.L, b)


def cholesky(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise FactorizationError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-8 * max(1.0, np.abs(A).max())):
        raise FactorizationError("matrix must be symmetric")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as err:
        raise FactorizationError(str(err)) from None
    return CholeskyFactor(L)


def cholesky_jittered(A, max_tries=8):
    """Factorize, retrying with doubling diagonal jitter 1e-10·tr(A)/n."""
    try:
        return cholesky(A)
    except FactorizationError:
        pass
    n = A.shape[0]
    jitter = 1e-10 * np.trace(A) / n
    if jitter <= 0.0:
        jitter = 1e-12
    eye = np.eye(n)
    for _ in range(max_tries):
        try:
            return cholesky(A + jitter * eye)
        except FactorizationError:
            jitter *= 2.0
    raise FactorizationError(f"not positive definite after {max_tries} jitter retries")


def cholesky_solve(A, b):
    """Solve A x = b for symmetric positive definite A."""
    return cholesky(A).solve(np.asarray(b, dtype=float))


def solve_lower(L, b):
    """Forward substitution for lower-triangular L."""
    b = np.asarray(b, dtype=float)
    x = b.copy()
    for i in range(L.shape[0]):
        if i:
            x[i] = x[i] - L[i, :i] @ x[:i]
        x[i] = x[i] / L[i, i]
    return x

def solve_upper(U, b):
    """Back substitution for upper-triangular U."""
    b = np.asarray(b, dtype=float)
    n = U.shape[0]
    x = b.copy()
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            x[i] = x[i] - U[i, i + 1:] @ x[i + 1:]
        x[i] = x[i] / U[i, i]
    return x


def symmetrize(A):
    return 0.5 * (A + A.T)


# -- tape primitives for SPD matrices ---------------------------------------

def spd_solve(A, b):
    """Tape op: x = A⁻¹ b for an SPD matrix node A; b is (n,) or (n, m).

    The backward rule is expressed through `spd_solve` again, so the op
    can sit inside twice-differentiated graphs.
    """
    factor = cholesky_jittered(A.value)
    x_val = factor.solve(b.value)

    def backward(g):
        gb = spd_solve(A, g)
        if x.value.ndim == 1:
            gA = tp.neg(tp.outer(gb, x))
        else:
            gA = tp.neg(tp.matmul(gb, tp.transpose(x)))
        return (gA, gb)

    x = tp.Node(A.tape, x_val, (A, b), backward, "spd_solve")
    return x


def spd_logdet(A):
    """Tape op: log|A| for an SPD matrix node, via Cholesky."""
    factor = cholesky_jittered(A.value)
    inv = factor.solve(np.eye(A.value.shape[0]))

    def backward(g):
        return (tp.mul(g, A.tape.constant(inv)),)

    return tp.Node(A.tape, np.array(factor.log_det), (A,), backward, "spd_logdet")
