import numpy as np
import pytest

from koopnet.numerics import (
    NonPrincipalSpectrumError,
    NumericalFailure,
    expm,
    lasso,
    logm,
    pinv,
)


class TestPinv:
    def test_identity(self):
        assert np.allclose(pinv(np.eye(2)), np.eye(2), atol=1e-14)

    def test_diagonal_with_zero_singular_value(self):
        result = pinv(np.diag([2.0, 0.0]))
        assert np.allclose(result, np.diag([0.5, 0.0]), atol=1e-14)

    def test_full_rank_tall_matches_normal_equations(self):
        # oracle: pinv of full-column-rank M equals (M^T M)^{-1} M^T
        rng = np.random.default_rng(7)
        m = rng.normal(size=(4, 2))
        oracle = np.linalg.solve(m.T @ m, m.T)
        assert np.allclose(pinv(m), oracle, atol=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    def test_penrose_conditions(self, seed):
        rng = np.random.default_rng(seed)
        rows, cols = rng.integers(1, 51, size=2)
        m = rng.normal(size=(rows, cols))
        if seed % 2:  # exercise rank-deficient inputs too
            m[:, : cols // 2 + 1] = m[:, :1]
        p = pinv(m)
        assert np.allclose(m @ p @ m, m, atol=1e-8)
        assert np.allclose(p @ m @ p, p, atol=1e-8)

    def test_return_rank(self):
        _, rank = pinv(np.diag([3.0, 1e-18]), return_rank=True)
        assert rank == 1

    def test_invalid_rcond(self):
        with pytest.raises(ValueError):
            pinv(np.eye(2), rcond=1.5)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            pinv(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestExpm:
    def test_zero(self):
        assert np.allclose(expm(np.zeros((2, 2))), np.eye(2), atol=1e-15)

    def test_diagonal(self):
        assert np.allclose(expm(np.diag([1.0, 2.0])), np.diag([np.e, np.e**2]), rtol=1e-12)

    def test_nilpotent_exact(self):
        # oracle: finite Taylor series, exp([[0,1],[0,0]]) = I + N
        n = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.allclose(expm(n), np.array([[1.0, 1.0], [0.0, 1.0]]), atol=1e-15)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_raises(self):
        with pytest.raises(NumericalFailure):
            expm(np.array([[1e6]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            expm(np.ones((2, 3)))


class TestLogm:
    def test_identity(self):
        assert np.allclose(logm(np.eye(3)), np.zeros((3, 3)), atol=1e-12)

    def test_diagonal(self):
        assert np.allclose(logm(np.diag([np.e, np.e**2])), np.diag([1.0, 2.0]), atol=1e-12)

    def test_rotation(self):
        # oracle: expm([[0,-t],[t,0]]) is the rotation by t
        theta = 0.1
        rot = np.array([
            [np.cos(theta), -np.sin(theta)],
            [np.sin(theta), np.cos(theta)],
        ])
        expected = np.array([[0.0, -0.1], [0.1, 0.0]])
        result = logm(rot)
        assert np.allclose(result, expected, atol=1e-12)
        assert np.allclose(expm(result), rot, atol=1e-12)

    def test_negative_real_eigenvalue_raises(self):
        with pytest.raises(NonPrincipalSpectrumError):
            logm(np.diag([1.0, -0.5]))

    def test_zero_eigenvalue_raises(self):
        with pytest.raises(NonPrincipalSpectrumError):
            logm(np.diag([1.0, 0.0]))

    def test_zero_matrix_raises(self):
        with pytest.raises(NonPrincipalSpectrumError):
            logm(np.zeros((2, 2)))

    @pytest.mark.parametrize("seed", range(10))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = rng.normal(size=(6, 6))
        m *= 0.45 / max(np.abs(np.linalg.eigvals(m)).max(), 1e-12)
        target = expm(m)
        recovered = expm(logm(target))
        rel = np.linalg.norm(recovered - target) / np.linalg.norm(target)
        assert rel < 1e-9

    def test_post_condition_roundtrip_tolerance(self):
        rng = np.random.default_rng(42)
        a = expm(rng.normal(size=(5, 5)) * 0.2)
        log_a = logm(a)
        rel = np.linalg.norm(expm(log_a) - a) / np.linalg.norm(a)
        assert rel < 1e-10

    def test_eigenvalue_imag_parts_in_principal_strip(self):
        rng = np.random.default_rng(11)
        a = expm(rng.normal(size=(8, 8)) * 0.3)
        w = np.linalg.eigvals(logm(a))
        assert np.all(np.abs(w.imag) < np.pi)

    def test_defective_matrix_fallback(self):
        # Jordan-like block: eigendecomposition is ill conditioned
        a = expm(np.array([[0.1, 1.0], [0.0, 0.1]]))
        log_a = logm(a)
        assert np.allclose(expm(log_a), a, atol=1e-10)


class TestLasso:
    def test_zero_penalty_is_least_squares(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(6, 6)) + 6 * np.eye(6)
        target = rng.normal(size=6)
        oracle = np.linalg.solve(a, target)
        res = lasso(a, target, 0.0)
        assert res.converged
        assert np.allclose(res.coef, oracle, atol=1e-8)

    def test_zero_penalty_matches_pinv_solution(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(30, 8))
        target = rng.normal(size=30)
        oracle = pinv(a) @ target
        res = lasso(a, target, 0.0)
        assert np.allclose(res.coef, oracle, atol=1e-6)

    def test_orthonormal_soft_threshold(self):
        # oracle: with orthonormal columns and penalty 2*rho the solution is
        # soft thresholding of design^T target by rho
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.normal(size=(20, 6)))
        target = rng.normal(size=20)
        rho = 0.3
        z = q.T @ target
        oracle = np.sign(z) * np.maximum(np.abs(z) - rho, 0.0)
        res = lasso(q, target, 2 * rho)
        assert np.allclose(res.coef, oracle, atol=1e-8)

    def test_full_shrinkage(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10, 4))
        target = rng.normal(size=10)
        penalty = 2 * np.abs(a.T @ target).max() + 1e-9
        res = lasso(a, target, penalty)
        assert np.all(res.coef == 0.0)

    def test_objective_monotone_across_sweeps(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(40, 25))
        target = rng.normal(size=40)
        res = lasso(a, target, 0.5, record_objective=True)
        diffs = np.diff(res.objectives)
        assert np.all(diffs <= 1e-12)

    def test_non_convergence_flag(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(50, 1))
        a = base + 0.01 * rng.normal(size=(50, 30))
        target = rng.normal(size=50)
        res = lasso(a, target, 0.0, max_iter=2)
        assert not res.converged
        assert res.n_sweeps == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lasso(np.eye(3), np.ones(4), 0.1)

    def test_negative_penalty(self):
        with pytest.raises(ValueError):
            lasso(np.eye(3), np.ones(3), -1.0)

    def test_standardize_recovers_ill_scaled(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(40, 3)) * np.array([1e-3, 1.0, 1e3])
        coef_true = np.array([2.0, -1.0, 0.5])
        target = a @ coef_true
        res = lasso(a, target, 1e-10, standardize=True)
        assert np.allclose(res.coef, coef_true, atol=1e-6)

    def test_zero_column_ignored(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        res = lasso(a, np.array([2.0, 0.0]), 0.0)
        assert np.allclose(res.coef, [2.0, 0.0])
