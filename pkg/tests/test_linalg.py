import math

import mpmath
import numpy as np
import pytest

from lowrank_expint.errors import (
    DimensionMismatchError,
    SizeCapExceededError,
    SylvesterSingularError,
)
from lowrank_expint.linalg import (
    LowRankMatrix,
    dense_expm,
    lowrank_add,
    lowrank_hadamard,
    orthonormalize,
    phi_scalar,
    solve_sylvester,
    svd_truncate_rank,
    svd_truncate_tol,
)


def rand_orth(rng, m, r):
    q, _ = np.linalg.qr(rng.standard_normal((m, r)))
    return q


def rand_lowrank(rng, m, n, r):
    u = rand_orth(rng, m, r)
    v = rand_orth(rng, n, r)
    s = rng.standard_normal((r, r))
    return LowRankMatrix(u, s, v)


# ---------------------------------------------------------------- LowRankMatrix


def test_lowrank_reconstruction_and_norm():
    rng = np.random.default_rng(0)
    y = rand_lowrank(rng, 12, 9, 3)
    dense = y.u @ y.s @ y.v.T
    assert np.allclose(y.todense(), dense)
    assert y.norm() == pytest.approx(np.linalg.norm(dense), rel=1e-13)


def test_lowrank_rejects_nonorthonormal_factors():
    rng = np.random.default_rng(1)
    u = rng.standard_normal((8, 3))  # not orthonormal
    v = rand_orth(rng, 6, 3)
    with pytest.raises(ValueError):
        LowRankMatrix(u, np.eye(3), v)


def test_lowrank_factor_orthonormality_tight():
    rng = np.random.default_rng(2)
    y = svd_truncate_rank(rng.standard_normal((30, 20)), 7)
    assert np.linalg.norm(y.u.T @ y.u - np.eye(7)) < 1e-12
    assert np.linalg.norm(y.v.T @ y.v - np.eye(7)) < 1e-12
    sig = y.sigma()
    assert np.all(sig >= 0) and np.all(np.diff(sig) <= 0)


# ------------------------------------------------------------------ truncation


def test_truncate_rank_diagonal_example():
    y = LowRankMatrix.from_dense(np.diag([3.0, 2.0, 1.0]))
    t = svd_truncate_rank(y, 2)
    assert t.rank == 2
    err = np.linalg.norm(t.todense() - np.diag([3.0, 2.0, 1.0]))
    assert err == pytest.approx(1.0, abs=1e-12)


def test_truncate_rank_identity_case():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((7, 5))
    t = svd_truncate_rank(x, 5)
    assert np.allclose(t.todense(), x, atol=1e-12)


def test_truncate_rank_matches_dense_svd_oracle():
    rng = np.random.default_rng(4)
    y = rand_lowrank(rng, 20, 15, 8)
    t = svd_truncate_rank(y, 3)
    # oracle: full dense SVD of the reconstruction
    dense = y.todense()
    sig = np.linalg.svd(dense, compute_uv=False)
    err_oracle = np.sqrt(np.sum(sig[3:] ** 2))
    err = np.linalg.norm(t.todense() - dense)
    assert err == pytest.approx(err_oracle, abs=1e-12)


def test_best_approximation_property_all_ranks():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((18, 11))
    sig = np.linalg.svd(x, compute_uv=False)
    for r in range(1, 11):
        err = np.linalg.norm(svd_truncate_rank(x, r).todense() - x)
        assert err == pytest.approx(np.sqrt(np.sum(sig[r:] ** 2)), abs=1e-12)


def test_truncate_tol_examples():
    assert svd_truncate_tol(np.diag([1.0, 1e-8]), 1e-4, 10).rank == 1
    assert svd_truncate_tol(np.diag([1.0, 1.0, 1.0]), 0.9, 10).rank == 1
    # tau below machine epsilon: keeps everything up to numerical rank
    rng = np.random.default_rng(6)
    x = rand_lowrank(rng, 15, 15, 4).todense()
    t = svd_truncate_tol(x, 1e-300, 10)
    assert t.rank == min(10, 15)


def test_truncate_tol_cap_flag():
    t = svd_truncate_tol(np.diag([1.0, 1.0, 1.0, 1.0]), 0.01, 2)
    assert t.rank == 2
    assert not t.tol_met
    ok = svd_truncate_tol(np.diag([1.0, 1e-9]), 1e-4, 2)
    assert ok.tol_met


def test_truncation_inequality_200_trials():
    # ||T_r(A+E) - A|| <= ||T_r(A) - A|| + 2||E||
    rng = np.random.default_rng(7)
    for _ in range(200):
        m = rng.integers(5, 41)
        n = rng.integers(5, 41)
        a = rng.standard_normal((m, n))
        e = rng.standard_normal((m, n)) * 10.0 ** rng.integers(-6, 2)
        r = int(rng.integers(1, 11))
        lhs = np.linalg.norm(svd_truncate_rank(a + e, r).todense() - a)
        rhs = np.linalg.norm(svd_truncate_rank(a, r).todense() - a)
        assert lhs <= rhs + 2 * np.linalg.norm(e) + 1e-12


# ------------------------------------------------------------------- addition


def test_add_cancellation_gives_zero():
    rng = np.random.default_rng(8)
    y = rand_lowrank(rng, 14, 10, 3)
    z = lowrank_add([y, y], [1.0, -1.0])
    assert z.sigma().size == 0 or np.all(z.sigma() <= 1e-13 * y.norm())


def test_add_matches_dense_oracle():
    rng = np.random.default_rng(9)
    y1 = rand_lowrank(rng, 16, 12, 2)
    y2 = rand_lowrank(rng, 16, 12, 3)
    z = lowrank_add([y1, y2], [2.0, -0.5])
    assert z.rank <= 5
    assert np.allclose(z.todense(), 2.0 * y1.todense() - 0.5 * y2.todense(), atol=1e-12)


def test_add_single_term_roundtrip():
    rng = np.random.default_rng(10)
    y = rand_lowrank(rng, 9, 9, 2)
    z = lowrank_add([y])
    assert np.allclose(z.todense(), y.todense(), atol=1e-13)


def test_add_shape_mismatch():
    rng = np.random.default_rng(11)
    with pytest.raises(DimensionMismatchError):
        lowrank_add([rand_lowrank(rng, 5, 5, 1), rand_lowrank(rng, 5, 6, 1)])


# ------------------------------------------------------------------- hadamard


def test_hadamard_with_ones_is_identity():
    rng = np.random.default_rng(12)
    m, n = 10, 8
    ones = LowRankMatrix(
        np.full((m, 1), 1 / np.sqrt(m)), np.array([[np.sqrt(m * n)]]), np.full((n, 1), 1 / np.sqrt(n)),
        is_svd=True,
    )
    y = rand_lowrank(rng, m, n, 3)
    z = lowrank_hadamard(ones, y)
    assert np.allclose(z.todense(), y.todense(), atol=1e-12)


def test_hadamard_matches_dense_oracle():
    rng = np.random.default_rng(13)
    y1 = rand_lowrank(rng, 30, 30, 2)
    y2 = rand_lowrank(rng, 30, 30, 2)
    z = lowrank_hadamard(y1, y2)
    assert z.rank <= 4
    assert np.allclose(z.todense(), y1.todense() * y2.todense(), atol=1e-12)


def test_hadamard_cube_rank_bound():
    rng = np.random.default_rng(14)
    y = rand_lowrank(rng, 25, 25, 2)
    cube = lowrank_hadamard(lowrank_hadamard(y, y), y)
    assert cube.rank <= 8
    assert np.allclose(cube.todense(), y.todense() ** 3, atol=1e-11)


def test_factored_arithmetic_dense_equivalence_sweep():
    rng = np.random.default_rng(15)
    for _ in range(10):
        m = int(rng.integers(4, 65))
        n = int(rng.integers(4, 65))
        r1, r2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        y1, y2 = rand_lowrank(rng, m, n, r1), rand_lowrank(rng, m, n, r2)
        scale = max(np.abs(y1.todense()).max() * np.abs(y2.todense()).max(), 1.0)
        assert np.allclose(
            lowrank_hadamard(y1, y2).todense(), y1.todense() * y2.todense(), atol=1e-12 * scale
        )
        assert np.allclose(
            lowrank_add([y1, y2]).todense(), y1.todense() + y2.todense(), atol=1e-12
        )


# ----------------------------------------------------------------------- expm


def test_expm_zero_and_diagonal():
    assert np.allclose(dense_expm(np.zeros((3, 3))), np.eye(3))
    e = dense_expm(np.diag([-1.0, -2.0]))
    assert np.allclose(e, np.diag([np.exp(-1.0), np.exp(-2.0)]), atol=1e-14)


def test_expm_symmetric_matches_eig_oracle():
    rng = np.random.default_rng(16)
    a = rng.standard_normal((8, 8))
    m = 0.5 * (a + a.T)
    lam, q = np.linalg.eigh(m)  # oracle route
    oracle = (q * np.exp(lam)) @ q.T
    assert np.allclose(dense_expm(m), oracle, atol=1e-12 * np.linalg.norm(oracle))


def test_expm_nonsymmetric_accuracy():
    rng = np.random.default_rng(17)
    m = rng.standard_normal((6, 6))
    lam, v = np.linalg.eig(m)
    oracle = (v @ np.diag(np.exp(lam)) @ np.linalg.inv(v)).real
    assert np.allclose(dense_expm(m), oracle, atol=1e-10 * np.linalg.norm(oracle))


def test_expm_size_cap():
    with pytest.raises(SizeCapExceededError):
        dense_expm(np.zeros((10, 10)), cap=8)


# ------------------------------------------------------------------------ phi


def test_phi_zero_order_is_exp():
    for z in (-30.0, -1.0, 0.0, 0.05, 2.5):
        assert phi_scalar(0, z) == pytest.approx(math.exp(z), rel=1e-15)


def test_phi_at_zero_is_inverse_factorial():
    for k in range(5):
        assert phi_scalar(k, 0.0) == pytest.approx(1.0 / math.factorial(k), rel=1e-15)


def test_phi_one_at_one():
    assert phi_scalar(1, 1.0) == pytest.approx(math.e - 1.0, rel=1e-14)


def _phi_mp(k, z):
    # high-precision oracle, immune to the cancellation of the closed form
    with mpmath.workdps(60):
        z = mpmath.mpf(z)
        if k == 0:
            return mpmath.e**z
        p = sum(z**j / mpmath.factorial(j) for j in range(k))
        if z == 0:
            return mpmath.mpf(1) / mpmath.factorial(k)
        return (mpmath.e**z - p) / z**k


def test_phi_recurrence_against_highprec_oracle():
    # phi_{k+1}(z) = (phi_k(z) - 1/k!)/z, with the right side evaluated in
    # high precision: in doubles the subtraction cancels for tiny z.
    for k in range(4):
        for z in (-1e-12, 1e-12, -1e-6, 1e-6, -1.0, 1.0, -30.0, 30.0):
            with mpmath.workdps(60):
                rhs = float((_phi_mp(k, z) - 1 / mpmath.factorial(k)) / mpmath.mpf(z))
            tol = 1e-13 * max(1.0, phi_scalar(k, abs(z)))
            assert abs(phi_scalar(k + 1, z) - rhs) <= tol


def test_phi_monotone_bound_symmetric_negative_definite():
    rng = np.random.default_rng(18)
    a = rng.standard_normal((7, 7))
    m = -(a @ a.T) - 0.1 * np.eye(7)
    lam, q = np.linalg.eigh(m)
    for k in range(3):
        phim = (q * np.array([phi_scalar(k, x) for x in lam])) @ q.T
        assert np.linalg.norm(phim, 2) <= phi_scalar(k, float(lam.max())) * (1 + 1e-12)


# ------------------------------------------------------------------ sylvester


def test_sylvester_identity_case():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((4, 4))
    c = solve_sylvester(-np.eye(4), -np.eye(4), -2.0 * x)
    assert np.allclose(c, x, atol=1e-12)


def test_sylvester_diagonal_entrywise_oracle():
    # for diagonal operands C_ij = F_ij / (lambda_i + mu_j)
    As = np.diag([-1.0, -2.0])
    Bs = np.diag([-3.0])
    c = solve_sylvester(As, Bs, np.ones((2, 1)))
    assert np.allclose(c, np.array([[-1.0 / 4.0], [-1.0 / 5.0]]), atol=1e-14)


def test_sylvester_residual_random_stable():
    rng = np.random.default_rng(20)
    for _ in range(20):
        a = rng.standard_normal((6, 6))
        b = rng.standard_normal((4, 4))
        As = -(a @ a.T) - 0.1 * np.eye(6)
        Bs = -(b @ b.T) - 0.1 * np.eye(4)
        f = rng.standard_normal((6, 4))
        c = solve_sylvester(As, Bs, f)
        res = np.linalg.norm(As @ c + c @ Bs - f)
        assert res <= 1e-10 * (np.linalg.norm(As) + np.linalg.norm(Bs)) * np.linalg.norm(c)


def test_sylvester_singularity_detected():
    As = np.diag([1.0, -2.0])
    Bs = np.diag([-1.0])  # 1 + (-1) = 0
    with pytest.raises(SylvesterSingularError):
        solve_sylvester(As, Bs, np.ones((2, 1)))


# ------------------------------------------------------------- orthonormalize


def test_orthonormalize_against_existing_basis():
    rng = np.random.default_rng(21)
    q = rand_orth(rng, 20, 4)
    _, kept = orthonormalize(q[:, :2], against=q)
    assert kept == 0


def test_orthonormalize_identity_columns():
    block = np.eye(6)[:, :3]
    q, kept = orthonormalize(block)
    assert kept == 3
    assert np.allclose(q.T @ q, np.eye(3), atol=1e-14)


def test_orthonormalize_deflates_duplicates():
    rng = np.random.default_rng(22)
    block = rng.standard_normal((50, 4))
    block = np.column_stack([block, block[:, 0], block[:, 2]])
    # oracle: numerical rank via SVD
    assert np.linalg.matrix_rank(block, tol=1e-10) == 4
    q, kept = orthonormalize(block, dedup_tol=1e-10)
    assert kept == 4
    assert np.linalg.norm(q.T @ q - np.eye(4)) < 1e-12


def test_orthonormalize_span_is_preserved():
    rng = np.random.default_rng(23)
    block = rng.standard_normal((30, 5))
    q, kept = orthonormalize(block)
    assert kept == 5
    resid = block - q @ (q.T @ block)
    assert np.linalg.norm(resid) < 1e-10 * np.linalg.norm(block)
