"""Ambiguity-resolved error metrics and bit error rate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class TrialMetrics:
    mse_g: float = float("nan")
    mse_h: float = float("nan")
    mse_cfo_pn: float = float("nan")
    ber: float = float("nan")
    iterations: int = 0
    converged: bool = True


def _align(taps: np.ndarray) -> np.ndarray:
    """Rotate so the reference tap is real and nonnegative."""
    ref = taps[0]
    if ref == 0:
        k = int(np.argmax(np.abs(taps)))
        if taps[k] == 0:
            return taps
        warnings.warn("first tap is zero; aligning on the strongest tap", RuntimeWarning)
        ref = taps[k]
    return taps * np.exp(-1j * np.angle(ref))


def mse_channel(est, truth) -> float:
    """Squared error after removing each vector's own first-tap phase."""
    est = np.asarray(est, dtype=complex)
    truth = np.asarray(truth, dtype=complex)
    if est.shape != truth.shape:
        raise ValueError("tap vectors must have equal length")
    return float(np.sum(np.abs(_align(est) - _align(truth)) ** 2))


def fold_cfo_pn(phi: float, theta) -> np.ndarray:
    """``delta_m = theta_m + 2 pi m phi / N`` with the first element subtracted."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    delta = theta + 2 * np.pi * np.arange(n) * phi / n
    return delta - delta[0]


def mse_cfo_pn(phi_hat: float, theta_hat, phi: float, theta) -> float:
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta_hat.shape != theta.shape:
        raise ValueError("PN vectors must have equal length")
    return float(np.sum((fold_cfo_pn(phi_hat, theta_hat) - fold_cfo_pn(phi, theta)) ** 2))


def ber(bits_hat, bits) -> float:
    bits_hat = np.asarray(bits_hat).ravel()
    bits = np.asarray(bits).ravel()
    if bits_hat.shape != bits.shape:
        raise ValueError("bit vectors must have equal length")
    if bits.size == 0:
        return 0.0
    return float(np.count_nonzero(bits_hat != bits)) / bits.size
