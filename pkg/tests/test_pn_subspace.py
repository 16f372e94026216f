from __future__ import annotations

import numpy as np
import pytest

from afrelay.pn_subspace import basis_for, build_basis, expand, pn_covariance, pn_precision, project
from afrelay.signal_model import generate_wiener_pn


class TestCovariance:
    def test_pattern(self):
        assert np.allclose(pn_covariance(3, 1e-4), 1e-4 * np.array([[1, 1, 1], [1, 2, 2], [1, 2, 3]]))

    def test_zero(self):
        assert np.all(pn_covariance(5, 0.0) == 0)

    @pytest.mark.parametrize("n", [2, 64, 512])
    def test_psd(self, n):
        s2 = 1e-3
        assert np.linalg.eigvalsh(pn_covariance(n, s2)).min() >= -1e-10 * s2 * n

    def test_precision_is_inverse(self):
        for n in (3, 8, 64):
            psi = pn_covariance(n, 2e-4)
            assert np.allclose(pn_precision(n, 2e-4) @ psi, np.eye(n), atol=1e-9)

    def test_precision_tridiagonal(self):
        p = pn_precision(3, 1.0)
        assert np.allclose(p, [[2, -1, 0], [-1, 2, -1], [0, -1, 1]])


class TestBasis:
    def test_full_rank_reconstruction(self):
        psi = pn_covariance(64, 1e-4)
        b = build_basis(psi, 64)
        assert np.linalg.norm(b.pi @ b.pi.T - psi) <= 1e-10 * np.linalg.norm(psi)

    def test_eigen_reconstruction(self):
        psi = pn_covariance(64, 1e-4)
        b = build_basis(psi, 10)
        rec = b.eigvecs @ np.diag(b.eigvals) @ b.eigvecs.T
        assert np.linalg.norm(rec - psi) <= 1e-10 * np.linalg.norm(psi)

    def test_orthonormal_and_sorted(self):
        b = basis_for(64, 1e-4, 32)
        assert np.allclose(b.eigvecs.T @ b.eigvecs, np.eye(64), atol=1e-12)
        assert np.all(np.diff(b.eigvals) <= 0)
        assert np.all(b.eigvals >= 0)

    def test_sign_convention(self):
        b = basis_for(32, 1e-4, 32)
        piv = np.abs(b.eigvecs).argmax(axis=0)
        assert np.all(b.eigvecs[piv, np.arange(32)] > 0)

    def test_captured_fraction_monotone(self):
        fr = [basis_for(64, 1e-4, m).captured_fraction() for m in range(1, 65)]
        assert np.all(np.diff(fr) >= -1e-15)

    def test_best_rank_m(self):
        psi = pn_covariance(64, 1e-4)
        b = build_basis(psi, 8)
        nu = np.sort(np.linalg.eigvalsh(psi))[::-1]
        err = np.linalg.norm(b.pi @ b.pi.T - psi)
        assert err == pytest.approx(np.sqrt(np.sum(nu[8:] ** 2)), rel=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            build_basis(pn_covariance(4, 1e-4), 0)
        with pytest.raises(ValueError):
            build_basis(-np.eye(4), 2)
        with pytest.raises(ValueError):
            build_basis(np.array([[1.0, 0.5], [0.0, 1.0]]), 1)


class TestExpand:
    def test_zero(self):
        b = basis_for(16, 1e-4, 4)
        assert np.all(expand(b, np.zeros(4)) == 0)

    def test_full_rank_inverse(self, rng):
        b = basis_for(16, 1e-4, 16)
        theta = generate_wiener_pn(16, 1e-4, rng)
        eta = np.diag(1 / np.sqrt(b.eigvals)) @ b.eigvecs.T @ theta
        assert np.allclose(expand(b, eta), theta, atol=1e-12)
        assert np.allclose(project(b, theta), eta, atol=1e-8)

    def test_covariance(self, rng):
        b = basis_for(32, 1e-4, 8)
        th = expand(b, rng.standard_normal((50_000, 8)))
        emp = th.T @ th / th.shape[0]
        ref = b.pi @ b.pi.T
        assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.03

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            expand(basis_for(8, 1e-4, 4), np.zeros(3))
