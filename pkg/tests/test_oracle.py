import numpy as np
import pytest

from lowrank_svi.errors import ContractViolation, NonConvergence
from lowrank_svi.oracle import (dense_eig, deterministic_power_iteration,
                                fixed_point_precision, kl_truncation_floor,
                                projector_distance)
from lowrank_svi.targets import GaussianTarget, LogisticTarget, expected_hessian_mc


class TestDenseEig:
    def test_diagonal(self):
        spec = dense_eig(np.diag([3.0, 2.0, 1.0]))
        np.testing.assert_allclose(spec.eigenvalues, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(spec.vectors), np.eye(3), atol=1e-12)

    def test_identity(self):
        spec = dense_eig(np.eye(4))
        np.testing.assert_allclose(spec.eigenvalues, np.ones(4))

    def test_random_diagonalisation(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 5))
        a = 0.5 * (a + a.T)
        spec = dense_eig(a)
        off = spec.vectors.T @ a @ spec.vectors - np.diag(spec.eigenvalues)
        assert np.linalg.norm(off) < 1e-9

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractViolation):
            dense_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_hand_characteristic_roots(self):
        # [[2,1],[1,2]] has roots 3 and 1
        spec = dense_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(spec.eigenvalues, [3.0, 1.0], atol=1e-9)
        # [[0,1],[1,0]] has roots +-1
        spec = dense_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(spec.eigenvalues, [1.0, -1.0], atol=1e-12)


class TestTruncationFloor:
    def test_full_rank_zero(self):
        spec = dense_eig(np.diag([4.0, 2.0, 1.5]))
        assert kl_truncation_floor(spec, 1.0, 3).exact == 0.0

    def test_scalar_value(self):
        # lam=1, alpha=1, p=0: 0.5 (1 - ln 2)
        spec = dense_eig(np.array([[2.0]]))
        floor = kl_truncation_floor(spec, 1.0, 0)
        assert floor.exact == pytest.approx(0.5 * (1 - np.log(2.0)), abs=1e-12)
        assert floor.exact == pytest.approx(0.153426, abs=1e-6)

    def test_exact_below_quadratic_surrogate(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            d = int(rng.integers(2, 8))
            lam = np.sort(rng.uniform(0, 5, d))[::-1]
            spec = dense_eig(np.diag(lam + 1.0))
            for p in range(d + 1):
                floor = kl_truncation_floor(spec, 1.0, p)
                assert floor.exact <= floor.quadratic + 1e-12

    def test_nonincreasing_in_p(self):
        spec = dense_eig(np.diag([6.0, 4.0, 2.0, 1.2]))
        floors = [kl_truncation_floor(spec, 1.0, p).exact for p in range(5)]
        assert all(a >= b for a, b in zip(floors, floors[1:]))
        assert floors[-1] == 0.0

    def test_matches_direct_kl_of_truncated_fit(self):
        # best rank-p member keeps top-p eigenpairs: floor equals its dense KL
        from lowrank_svi.lowrank import LowRankGaussian, kl_gaussian

        rng = np.random.default_rng(2)
        basis, _ = np.linalg.qr(rng.standard_normal((5, 3)))
        target = GaussianTarget(0.7, basis, np.array([3.0, 1.4, 0.5]))
        spec = dense_eig(target.precision_dense())
        for p in (0, 1, 2, 3):
            q = LowRankGaussian(np.zeros(5), 0.7, basis[:, :p],
                                target.eigenvalues[:p])
            floor = kl_truncation_floor(spec, 0.7, p).exact
            assert kl_gaussian(q, target) == pytest.approx(floor, abs=1e-10)


class TestFixedPoint:
    def test_gaussian_one_step(self):
        rng = np.random.default_rng(3)
        basis, _ = np.linalg.qr(rng.standard_normal((3, 2)))
        target = GaussianTarget(1.0, basis, [2.0, 1.0])
        omega = fixed_point_precision(target, damping=1.0, tol=1e-8, max_iter=3,
                                      mc_samples=10, seed=0)
        np.testing.assert_allclose(omega, target.precision_dense(), atol=1e-8)

    def test_infinite_tolerance_returns_start(self):
        rng = np.random.default_rng(4)
        basis, _ = np.linalg.qr(rng.standard_normal((3, 1)))
        target = GaussianTarget(2.0, basis, [1.0])
        omega = fixed_point_precision(target, damping=0.5, tol=np.inf, max_iter=5,
                                      mc_samples=10, seed=0)
        np.testing.assert_allclose(omega, 2.0 * np.eye(3), atol=0)

    def test_max_iter_exceeded(self):
        rng = np.random.default_rng(5)
        basis, _ = np.linalg.qr(rng.standard_normal((2, 1)))
        target = GaussianTarget(1.0, basis, [3.0])
        with pytest.raises(NonConvergence) as err:
            fixed_point_precision(target, damping=0.01, tol=1e-12, max_iter=2,
                                  mc_samples=10, seed=0)
        assert err.value.residual > 0

    def test_logistic_self_consistency(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((50, 2))
        y = (rng.uniform(size=50) < 0.5).astype(float)
        target = LogisticTarget(X, y, prior_precision=1.0)
        omega = fixed_point_precision(target, damping=0.5, tol=1e-4, max_iter=60,
                                      mc_samples=20_000, seed=0)
        refreshed = expected_hessian_mc(target, omega, 20_000, seed=123)
        rel = np.linalg.norm(omega - refreshed) / np.linalg.norm(omega)
        assert rel < 0.02

    def test_damping_invariance(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((40, 2))
        y = (rng.uniform(size=40) < 0.5).astype(float)
        target = LogisticTarget(X, y, prior_precision=1.0)
        o_half = fixed_point_precision(target, damping=0.5, tol=1e-5, max_iter=80,
                                       mc_samples=20_000, seed=0)
        o_full = fixed_point_precision(target, damping=1.0, tol=1e-5, max_iter=80,
                                       mc_samples=20_000, seed=0)
        rel = np.linalg.norm(o_half - o_full) / np.linalg.norm(o_full)
        assert rel < 0.02


class TestPowerIteration:
    def test_exact_eigenvector_fixed(self):
        u = deterministic_power_iteration(np.diag([4.0, 1.0]), 1, 25)
        np.testing.assert_allclose(np.abs(u), [[1.0], [0.0]], atol=1e-12)

    def test_one_hand_step(self):
        # QR of diag(4,1) @ (1,1)/sqrt(2) normalises (4,1)
        a = np.diag([4.0, 1.0])
        u0 = np.array([[1.0], [1.0]]) / np.sqrt(2)
        q, _ = np.linalg.qr(a @ u0)
        expected = np.array([4.0, 1.0]) / np.sqrt(17.0)
        np.testing.assert_allclose(np.abs(q[:, 0]), expected, atol=1e-9)
        np.testing.assert_allclose(expected, [0.970143, 0.242536], atol=1e-6)

    def test_convergence_rate_matches_gap(self):
        # subspace error decays like ((lam_{p+1}+a)/(lam_p+a))^t on gapped spectra
        rng = np.random.default_rng(8)
        basis, _ = np.linalg.qr(rng.standard_normal((10, 10)))
        lam = np.array([8.0, 5.0, 3.0, 1.8, 1.0, 0.6, 0.35, 0.2, 0.1, 0.05])
        a = (basis * (lam + 1.0)) @ basis.T
        p = 3
        top = basis[:, :p]
        errs = []
        for t in (6, 10, 14):
            u = deterministic_power_iteration(a, p, t)
            errs.append(projector_distance(u, top))
        ratio = (lam[p] + 1.0) / (lam[p - 1] + 1.0)
        measured = (errs[2] / errs[0]) ** (1.0 / 8.0)
        assert abs(measured - ratio) <= 0.1 * ratio
