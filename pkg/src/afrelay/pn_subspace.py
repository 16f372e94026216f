"""Wiener phase-noise covariance and its truncated eigen-basis.

A length-N Wiener path ``theta`` is represented as ``theta = Pi @ eta`` with
``eta ~ N(0, I_M)`` and ``Pi = U[:, :M] * sqrt(nu[:M])``; ``Pi`` carries all of
the scale, so ``eta`` is always standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PnBasis:
    pi: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray

    @property
    def m(self) -> int:
        return self.pi.shape[1]

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    def captured_fraction(self) -> float:
        total = self.eigvals.sum()
        return 1.0 if total == 0 else float(self.eigvals[: self.m].sum() / total)


def pn_covariance(n: int, sigma2: float) -> np.ndarray:
    """``Psi[r, c] = sigma2 * (min(r, c) + 1)``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    k = np.arange(n)
    return sigma2 * (np.minimum.outer(k, k) + 1.0)


def pn_precision(n: int, sigma2: float) -> np.ndarray:
    """Closed-form inverse of :func:`pn_covariance` (tridiagonal)."""
    if sigma2 <= 0:
        raise ValueError("precision needs sigma2 > 0")
    out = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    out[-1, -1] = 1.0
    return out / sigma2


def build_basis(psi: np.ndarray, m: int, tol: float = 1e-10) -> PnBasis:
    """Top-``m`` scaled eigenvectors of a PSD covariance.

    Eigenvalues are sorted descending and each eigenvector's largest-magnitude
    entry is made positive, so the basis does not depend on the LAPACK build.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must satisfy 1 <= m <= {n}")
    if not np.allclose(psi, psi.T, atol=1e-14 * max(1.0, np.abs(psi).max())):
        raise ValueError("covariance must be symmetric")
    nu, u = np.linalg.eigh(psi)
    scale = max(1.0, float(np.abs(nu).max())) if nu.size else 1.0
    if nu.size and nu.min() < -tol * scale:
        raise ValueError(f"covariance is not PSD (min eigenvalue {nu.min():.3e})")
    order = np.argsort(nu)[::-1]
    nu = np.clip(nu[order], 0.0, None)
    u = u[:, order]
    pivot = np.abs(u).argmax(axis=0)
    signs = np.sign(u[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    u = u * signs
    pi = u[:, :m] * np.sqrt(nu[:m])
    return PnBasis(pi=pi, eigvecs=u, eigvals=nu)


def basis_for(n: int, sigma2: float, m: int) -> PnBasis:
    return build_basis(pn_covariance(n, sigma2), m)


def expand(basis: PnBasis, eta: np.ndarray) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != basis.m:
        raise ValueError(f"eta has length {eta.shape[-1]}, basis has M={basis.m}")
    return eta @ basis.pi.T


def project(basis: PnBasis, theta: np.ndarray) -> np.ndarray:
    """Least-squares coordinates of ``theta`` in the basis (zero on null directions)."""
    return np.linalg.pinv(basis.pi) @ theta
