"""Cholesky solves vs an elimination oracle, RNG and Sobol contracts."""

import numpy as np
import pytest

from duffbench import numkit as nk


def gaussian_elimination_solve(A, b):
    """Independent dense solve: partial-pivot Gaussian elimination."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for col in range(n):
        piv = col + np.argmax(np.abs(A[col:, col]))
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, n):
            factor = A[row, col] / A[col, col]
            A[row, col:] -= factor * A[col, col:]
            b[row] -= factor * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


def random_spd(stream, n):
    M = stream.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


def test_identity_solve():
    x = nk.cholesky_solve(np.eye(3), [1.0, 2.0, 3.0])
    assert np.allclose(x, [1.0, 2.0, 3.0], atol=1e-15)


def test_solve_matches_elimination_oracle():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    b = np.array([2.0, 1.0])
    x = nk.cholesky_solve(A, b)
    ref = gaussian_elimination_solve(A, b)
    assert np.allclose(x, ref, atol=1e-12)


def test_indefinite_matrix_raises():
    with pytest.raises(nk.FactorizationError):
        nk.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_asymmetric_matrix_raises():
    with pytest.raises(nk.FactorizationError):
        nk.cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_residual_bound_random_spd_up_to_64():
    stream = nk.RngStream(42).substream("spd")
    for n in (2, 5, 16, 33, 64):
        A = random_spd(stream, n)
        b = stream.normal(size=n)
        x = nk.cholesky_solve(A, b)
        res = np.max(np.abs(A @ x - b))
        assert res < 1e-10 * max(1.0, np.max(np.abs(b)))


def test_log_det_matches_slogdet():
    stream = nk.RngStream(43).substream("logdet")
    A = random_spd(stream, 12)
    factor = nk.cholesky(A)
    _, ref = np.linalg.slogdet(A)
    assert factor.log_det == pytest.approx(ref, rel=1e-12)


def test_jitter_recovers_near_singular():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank deficient
    factor = nk.cholesky_jittered(A)
    assert np.all(np.isfinite(factor.L))
    with pytest.raises(nk.FactorizationError):
        nk.cholesky_jittered(np.array([[1.0, 3.0], [3.0, 1.0]]))  # indefinite


def test_spd_solve_tape_gradient():
    stream = nk.RngStream(44).substream("spd-grad")
    A0 = random_spd(stream, 4)
    b0 = stream.normal(size=4)
    tape = nk.Tape()
    A = tape.leaf(A0)
    b = tape.leaf(b0)
    x = nk.spd_solve(A, b)
    out = nk.vsum(x * x)
    g = nk.grad(out, wrt=[A, b])

    def f(A_, b_):
        return float(np.sum(np.linalg.solve(A_, b_) ** 2))

    h = 1e-6
    for idx in [(0, 0), (1, 2), (3, 3)]:
        P = A0.copy()
        P[idx] += h
        hi = f(P, b0)
        P[idx] -= 2 * h
        lo = f(P, b0)
        assert g[A][idx] == pytest.approx((hi - lo) / (2 * h), rel=1e-4, abs=1e-6)
    for i in range(4):
        p = b0.copy()
        p[i] += h
        hi = f(A0, p)
        p[i] -= 2 * h
        lo = f(A0, p)
        assert g[b][i] == pytest.approx((hi - lo) / (2 * h), rel=1e-5, abs=1e-7)


def test_spd_logdet_tape_gradient():
    stream = nk.RngStream(45).substream("logdet-grad")
    A0 = random_spd(stream, 4)
    tape = nk.Tape()
    A = tape.leaf(A0)
    out = nk.spd_logdet(A)
    g = nk.grad(out, wrt=[A])[A]
    assert np.allclose(g, np.linalg.inv(A0), atol=1e-9)


def test_rng_equal_seeds_equal_draws():
    a = nk.RngStream(123)
    b = nk.RngStream(123)
    assert np.array_equal(a.normal(size=10_000), b.normal(size=10_000))


def test_rng_substreams_differ_and_reproduce():
    a = nk.RngStream(123).substream("noise")
    b = nk.RngStream(123).substream("noise")
    c = nk.RngStream(123).substream("init")
    draw_a = a.uniform(size=100)
    assert np.array_equal(draw_a, b.uniform(size=100))
    assert not np.array_equal(draw_a, c.uniform(size=100))


# first eight points of the base-2 Sobol sequence, dimension 1
SOBOL_DIM1_TABLE = [0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125]


def test_sobol_first_point_is_zero():
    assert nk.sobol_sample(1, 0.0, 1.0).tolist() == [0.0]


def test_sobol_matches_reference_table():
    assert np.allclose(nk.sobol_sequence(8), SOBOL_DIM1_TABLE, atol=0.0)


def test_sobol_range_and_distinct():
    pts = nk.sobol_sample(256, 0.0, 120.0)
    assert np.all((pts >= 0.0) & (pts < 120.0))
    assert len(np.unique(pts)) == 256


def test_sobol_indices_distinct():
    idx = nk.sobol_indices(256, 1024)
    assert len(np.unique(idx)) == 256
    assert idx.min() >= 0 and idx.max() < 1024


def test_sobol_degenerate_domain_rejected():
    with pytest.raises(ValueError):
        nk.sobol_sample(4, 1.0, 1.0)
