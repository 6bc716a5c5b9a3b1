import json

import numpy as np
import pytest

from lowrank_svi.errors import ContractViolation
from lowrank_svi.lowrank import (LowRankGaussian, PrecisionView,
                                 frobenius_precision_error, kl_gaussian,
                                 rayleigh_quotients)
from lowrank_svi.oracle import kl_gaussian_dense
from lowrank_svi.targets import GaussianTarget


def random_state(seed, d=6, p=3, alpha=1.0):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, p)))
    lam = np.sort(rng.uniform(0.2, 4.0, p))[::-1]
    return LowRankGaussian(np.zeros(d), alpha, basis, lam)


def random_target(seed, d=6, r=3, alpha=1.0):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, r)))
    lam = np.sort(rng.uniform(0.2, 4.0, r))[::-1]
    return GaussianTarget(alpha, basis, lam)


class TestConstruction:
    def test_orthonormality_required(self):
        basis = np.ones((4, 2))
        with pytest.raises(ContractViolation):
            LowRankGaussian(np.zeros(4), 1.0, basis, [1.0, 1.0])

    def test_rank_bounded_by_dim(self):
        with pytest.raises(ContractViolation):
            LowRankGaussian(np.zeros(2), 1.0, np.eye(3), [1.0, 1.0, 1.0])

    def test_spd_floor_clamps_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            q = LowRankGaussian(np.zeros(2), 1.0, np.eye(2)[:, :1], [-0.9999999])
        assert q.lam[0] == pytest.approx(-(1 - 1e-6))
        assert any("clamp" in rec.message for rec in caplog.records)

    def test_indefinite_rejected(self):
        with pytest.raises(ContractViolation):
            LowRankGaussian(np.zeros(2), 1.0, np.eye(2)[:, :1], [-1.5])

    def test_precision_view_spectrum(self):
        q = random_state(0)
        assert PrecisionView(q).spectrum_consistent()


class TestSampling:
    def test_identity_precision(self):
        q = LowRankGaussian(np.zeros(3), 1.0, np.zeros((3, 0)), np.zeros(0))
        x = q.sample(100_000, seed=0)
        cov = np.cov(x.T)
        assert np.max(np.abs(cov - np.eye(3))) < 0.02

    def test_spanned_direction_variance(self):
        # Var along u is 1/(alpha+lam) = 0.25; orthogonal stays 1.0
        q = LowRankGaussian(np.zeros(2), 1.0, np.eye(2)[:, :1], [3.0])
        x = q.sample(100_000, seed=1)
        v1, v2 = x[:, 0].var(), x[:, 1].var()
        n = x.shape[0]
        assert abs(v1 - 0.25) <= 3 * 0.25 * np.sqrt(2.0 / n)
        assert abs(v2 - 1.0) <= 3 * 1.0 * np.sqrt(2.0 / n)

    def test_fixed_seed_bit_identical(self):
        q = random_state(3)
        a = q.sample(64, seed=42)
        b = q.sample(64, seed=42)
        assert np.array_equal(a, b)

    def test_empirical_precision_matches(self):
        # inverse sample covariance recovers alpha I + U diag(lam) U'
        q = random_state(7, d=4, p=2, alpha=0.8)
        x = q.sample(200_000, seed=5)
        emp = np.linalg.inv(np.cov(x.T))
        target = q.precision_dense()
        n = x.shape[0]
        # entrywise tolerance ~ 5 standard errors of an inverse-Wishart entry
        scale = np.sqrt(np.outer(np.diag(target), np.diag(target)))
        assert np.max(np.abs(emp - target) / scale) <= 5 * np.sqrt(2.0 / n) * 3


class TestKl:
    def test_identical_zero(self):
        target = GaussianTarget(1.0, np.zeros((5, 0)), np.zeros(0))
        q = LowRankGaussian(np.zeros(5), 1.0, np.zeros((5, 0)), np.zeros(0))
        assert kl_gaussian(q, target) == 0.0

    def test_scalar_closed_form(self):
        # d=1, Omega_q=2, Omega_p=1: 0.5 (ln 2 - 1 + 0.5)
        target = GaussianTarget(1.0, np.zeros((1, 0)), np.zeros(0))
        q = LowRankGaussian(np.zeros(1), 1.0, np.eye(1), [1.0])
        expected = 0.5 * (np.log(2.0) - 1.0 + 0.5)
        assert kl_gaussian(q, target) == pytest.approx(expected, abs=1e-12)
        assert kl_gaussian(q, target) == pytest.approx(0.096574, abs=1e-6)

    def test_matches_dense_oracle(self):
        q = random_state(11)
        target = random_target(12)
        dense = kl_gaussian_dense(q.precision_dense(), target.precision_dense())
        assert kl_gaussian(q, target) == pytest.approx(dense, abs=1e-10)

    def test_dense_oracle_agreement_many_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            d = int(rng.integers(1, 11))
            p = int(rng.integers(0, d + 1))
            r = int(rng.integers(0, d + 1))
            q = random_state(1000 + trial, d=d, p=p, alpha=float(rng.uniform(0.3, 2)))
            target = random_target(2000 + trial, d=d, r=r,
                                   alpha=float(rng.uniform(0.3, 2)))
            dense = kl_gaussian_dense(q.precision_dense(), target.precision_dense())
            assert kl_gaussian(q, target) == pytest.approx(dense, abs=1e-9)

    def test_nonnegative_and_zero_iff_equal(self):
        target = random_target(21, d=5, r=2)
        q_match = LowRankGaussian(np.zeros(5), target.alpha, target.basis,
                                  target.eigenvalues)
        assert 0.0 <= kl_gaussian(q_match, target) <= 1e-12
        q_off = random_state(22, d=5, p=2, alpha=target.alpha)
        assert kl_gaussian(q_off, target) > 0.0

    def test_mean_mismatch_rejected(self):
        target = random_target(31)
        q = LowRankGaussian(np.full(6, 1e-6), 1.0, np.zeros((6, 0)), np.zeros(0))
        with pytest.raises(ContractViolation):
            kl_gaussian(q, target)

    def test_invariance_under_sign_and_permutation(self):
        q = random_state(41, d=7, p=3)
        target = random_target(42, d=7, r=3)
        base = kl_gaussian(q, target)
        flipped = LowRankGaussian(q.mean, q.alpha, q.basis * np.array([1, -1, 1]),
                                  q.lam)
        perm = [2, 0, 1]
        permuted = LowRankGaussian(q.mean, q.alpha, q.basis[:, perm], q.lam[perm])
        assert kl_gaussian(flipped, target) == pytest.approx(base, abs=1e-12)
        assert kl_gaussian(permuted, target) == pytest.approx(base, abs=1e-12)
        rq = rayleigh_quotients(q, target)
        np.testing.assert_allclose(rayleigh_quotients(flipped, target), rq,
                                   atol=1e-12)
        np.testing.assert_allclose(rayleigh_quotients(permuted, target), rq[perm],
                                   atol=1e-12)


class TestFrobenius:
    def test_zero_when_equal(self):
        q = random_state(51)
        assert frobenius_precision_error(q, q.precision_dense(), 1.0) == 0.0

    def test_identity_norm(self):
        q = LowRankGaussian(np.zeros(4), 1.0, np.zeros((4, 0)), np.zeros(0))
        assert frobenius_precision_error(q, np.zeros((4, 4)), 1.0) == pytest.approx(2.0)

    def test_matches_entrywise_sum(self):
        q = random_state(52, d=3, p=2)
        rng = np.random.default_rng(5)
        ref = rng.standard_normal((3, 3))
        ref = 0.5 * (ref + ref.T)
        direct = np.sqrt(np.sum((ref - 0.7 * q.precision_dense()) ** 2))
        assert frobenius_precision_error(q, ref, 0.7) == pytest.approx(direct,
                                                                       abs=1e-12)


class TestRayleigh:
    def test_exact_eigenvectors(self):
        target = random_target(61, d=5, r=3)
        q = LowRankGaussian(np.zeros(5), target.alpha, target.basis,
                            target.eigenvalues)
        np.testing.assert_allclose(rayleigh_quotients(q, target),
                                   target.eigenvalues + target.alpha, atol=1e-12)

    def test_mixed_direction(self):
        # Omega = diag(5,3,1): u = (1,1,0)/sqrt(2) reads (5+3)/2 = 4
        target = GaussianTarget(1.0, np.eye(3)[:, :2], [4.0, 2.0])
        u = np.array([[1.0], [1.0], [0.0]]) / np.sqrt(2)
        q = LowRankGaussian(np.zeros(3), 1.0, u, [1.0])
        assert rayleigh_quotients(q, target)[0] == pytest.approx(4.0, abs=1e-12)

    def test_orthogonal_floor(self):
        target = GaussianTarget(1.0, np.eye(3)[:, :2], [4.0, 2.0])
        q = LowRankGaussian(np.zeros(3), 1.0, np.eye(3)[:, 2:], [1.0])
        assert rayleigh_quotients(q, target)[0] == pytest.approx(1.0, abs=1e-12)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        q = random_state(71, d=5, p=2)
        path = tmp_path / "state.json"
        q.save(path)
        back = LowRankGaussian.load(path)
        np.testing.assert_array_equal(back.mean, q.mean)
        np.testing.assert_array_equal(back.basis, q.basis)
        np.testing.assert_array_equal(back.lam, q.lam)
        assert back.alpha == q.alpha
        doc = json.loads(path.read_text())
        assert set(doc) == {"mu", "alpha", "U", "lambda"}
