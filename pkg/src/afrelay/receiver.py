"""Data-phase receiver: PN tracking and symbol detection on comb-type symbols.

Each data symbol carries known pilots on ``cfg.pilot_indices``. The receiver
alternates between a linearized MAP update of the symbol's PN coordinates and
a generalized least-squares estimate of the data subcarriers, keeping the
symbol estimates soft until the final slicing step.

Two reference receivers share the same machinery: one that ignores PN
altogether and a genie that knows every impairment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .pn_subspace import PnBasis, basis_for, pn_covariance
from .signal_model import SimConfig, build_G, cfo_phasor, dft_matrix

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


def qpsk_map(bits) -> np.ndarray:
    """Gray QPSK: first bit picks the real sign, second the imaginary sign (0 -> +)."""
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size % 2:
        raise ValueError("bit count must be even")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    pairs = bits.reshape(-1, 2)
    return _QPSK[2 * pairs[:, 0] + pairs[:, 1]]


def qpsk_demap(symbols) -> np.ndarray:
    """Nearest-point slicing; ties on an axis resolve to bit 0."""
    s = np.asarray(symbols, dtype=complex).ravel()
    out = np.empty((s.size, 2), dtype=np.int8)
    out[:, 0] = s.real < 0
    out[:, 1] = s.imag < 0
    return out.ravel()


@dataclass
class CombSymbol:
    values: np.ndarray
    pilot_indices: np.ndarray
    data_indices: np.ndarray
    bits: np.ndarray

    @classmethod
    def random(cls, cfg: SimConfig, rng: np.random.Generator,
               power: Optional[float] = None) -> "CombSymbol":
        power = cfg.p_src if power is None else power
        pil, dat = cfg.pilot_indices, cfg.data_indices
        amp = np.sqrt(power)
        values = np.empty(cfg.n_subcarriers, dtype=complex)
        values[pil] = amp * qpsk_map(rng.integers(0, 2, 2 * pil.size))
        bits = rng.integers(0, 2, 2 * dat.size).astype(np.int8)
        values[dat] = amp * qpsk_map(bits)
        return cls(values=values, pilot_indices=pil, data_indices=dat, bits=bits)


@dataclass
class ChannelKnowledge:
    """What the receiver believes about the link (estimated or true)."""

    phi: float
    c: np.ndarray
    g: np.ndarray
    alpha: float


@dataclass
class DetectionResult:
    theta_hat: np.ndarray
    soft_symbols: np.ndarray
    hard_bits: np.ndarray
    iterations: int
    objective_trace: list = field(default_factory=list)
    diverged: bool = False


class CombReceiver:
    """Reusable per-frame receiver; everything that does not depend on ``y`` is cached.

    Parameters
    ----------
    cfg : SimConfig
    know : ChannelKnowledge
        CFO, cascade and relay channel estimates from the training phase.
    basis : PnBasis, optional
        PN subspace; ``None`` disables PN tracking (PN assumed zero).
    power : float, optional
        Per-subcarrier transmit power of the comb symbol (default ``cfg.p_src``).
    """

    def __init__(self, cfg: SimConfig, know: ChannelKnowledge,
                 basis: Optional[PnBasis] = None, power: Optional[float] = None,
                 max_iters: int = 30, epsilon: Optional[float] = None):
        n = cfg.n_subcarriers
        self.cfg = cfg
        self.n = n
        self.basis = basis
        self.max_iters = max_iters
        self.epsilon = 1e-4 * n if epsilon is None else epsilon
        self.pil = cfg.pilot_indices
        self.dat = cfg.data_indices
        self.power = cfg.p_src if power is None else power
        c_freq = np.fft.fft(know.c, n)
        lam_phi = cfo_phasor(know.phi, n)
        # alpha Lambda_phi F^H Lambda_c : column k is subcarrier k's time-domain footprint
        self.t0 = know.alpha * lam_phi[:, None] * dft_matrix(n).conj() * c_freq[None, :]
        gm = build_G(know.g, n)
        self.k0 = (know.alpha ** 2 * cfg.noise_var_relay) * (
            lam_phi[:, None] * (gm @ gm.conj().T) * lam_phi.conj()[None, :])
        self.var_d = cfg.noise_var_dest
        self.psi = pn_covariance(n, cfg.pn_var_sd) if basis is not None else None

    def sigma(self, theta: Optional[np.ndarray]) -> np.ndarray:
        if theta is None:
            k = self.k0
        else:
            u = np.exp(1j * theta)
            k = u[:, None] * self.k0 * u.conj()[None, :]
        return k + self.var_d * np.eye(self.n)

    def sigma_prior(self) -> np.ndarray:
        k = self.k0 + (self.k0 * self.psi if self.psi is not None else 0.0)
        return k + self.var_d * np.eye(self.n)

    @staticmethod
    def _factor(a: np.ndarray):
        try:
            return sla.cho_factor(a, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            tau = 1e-10 * float(np.trace(a).real) / a.shape[0]
            return sla.cho_factor(a + tau * np.eye(a.shape[0]), lower=True, check_finite=False)

    def detect_data(self, y: np.ndarray, theta: Optional[np.ndarray], sig_f,
                    pilots: np.ndarray) -> np.ndarray:
        """Generalized LS estimate of the data subcarriers given PN and covariance."""
        t = self.t0 if theta is None else np.exp(1j * theta)[:, None] * self.t0
        if self.dat.size == 0:
            return np.zeros(0, dtype=complex)
        td, tp = t[:, self.dat], t[:, self.pil]
        resid = y - tp @ pilots
        w = sla.cho_solve(sig_f, td, check_finite=False)
        normal = td.conj().T @ w
        rhs = w.conj().T @ resid
        try:
            return np.linalg.solve(normal, rhs)
        except np.linalg.LinAlgError:
            tau = 1e-10 * float(np.trace(normal).real) / normal.shape[0]
            return np.linalg.solve(normal + tau * np.eye(normal.shape[0]), rhs)

    def track_pn(self, y: np.ndarray, s_full: np.ndarray, sig_f) -> np.ndarray:
        """Linearized MAP update of the PN coordinates given current symbols."""
        a = self.t0 @ s_full
        mmat = 1j * a[:, None] * self.basis.pi
        wm = sla.cho_solve(sig_f, mmat, check_finite=False)
        lhs = (mmat.conj().T @ wm).real + 0.5 * np.eye(self.basis.m)
        rhs = (wm.conj().T @ (y - a)).real
        return np.linalg.solve(lhs, rhs)

    def objective(self, y, s_full, theta, eta, sig_f) -> float:
        mu = (self.t0 @ s_full) if theta is None else np.exp(1j * theta) * (self.t0 @ s_full)
        r = y - mu
        quad = float(np.real(np.vdot(r, sla.cho_solve(sig_f, r, check_finite=False))))
        logdet = 2.0 * float(np.sum(np.log(np.abs(np.diag(sig_f[0])))))
        prior = 0.5 * float(np.dot(eta, eta)) if eta is not None else 0.0
        return logdet + quad + prior

    def _full(self, data: np.ndarray, pilots: np.ndarray) -> np.ndarray:
        s = np.empty(self.n, dtype=complex)
        s[self.pil] = pilots
        s[self.dat] = data
        return s

    def _slice(self, soft: np.ndarray) -> np.ndarray:
        return qpsk_demap(soft / np.sqrt(self.power))

    def run(self, y: np.ndarray, pilots: np.ndarray) -> DetectionResult:
        """Alternate PN tracking and data estimation until the objective settles."""
        y = np.asarray(y, dtype=complex)
        if y.shape != (self.n,):
            raise ValueError(f"y must have shape ({self.n},)")
        if self.basis is None:
            return self.run_fixed(y, pilots, None)
        sig_f = self._factor(self.sigma_prior())
        soft = self.detect_data(y, None, sig_f, pilots)
        theta = np.zeros(self.n)
        eta = np.zeros(self.basis.m)
        trace = [self.objective(y, self._full(soft, pilots), None, eta, self._factor(self.sigma(None)))]
        best = (trace[0], theta, soft)
        it = 0
        for it in range(1, self.max_iters + 1):
            eta = self.track_pn(y, self._full(soft, pilots), sig_f)
            theta = self.basis.pi @ eta
            sig_f = self._factor(self.sigma(theta))
            soft = self.detect_data(y, theta, sig_f, pilots)
            q = self.objective(y, self._full(soft, pilots), theta, eta, sig_f)
            trace.append(q)
            if q < best[0]:
                best = (q, theta, soft)
            if abs(trace[-1] - trace[-2]) <= self.epsilon:
                break
        diverged = trace[-1] > best[0] + self.epsilon
        _, theta_b, soft_b = best if diverged else (None, theta, soft)
        return DetectionResult(theta_hat=theta_b, soft_symbols=soft_b,
                               hard_bits=self._slice(soft_b), iterations=it,
                               objective_trace=trace, diverged=diverged)

    def run_fixed(self, y: np.ndarray, pilots: np.ndarray,
                  theta: Optional[np.ndarray]) -> DetectionResult:
        """Single GLS detection with the PN held fixed (``None`` means zero)."""
        sig_f = self._factor(self.sigma(theta))
        soft = self.detect_data(np.asarray(y, dtype=complex), theta, sig_f, pilots)
        th = np.zeros(self.n) if theta is None else np.asarray(theta, dtype=float)
        return DetectionResult(theta_hat=th, soft_symbols=soft, hard_bits=self._slice(soft),
                               iterations=0, objective_trace=[])


def run_detection(y, know: ChannelKnowledge, comb: CombSymbol, cfg: SimConfig,
                  basis: Optional[PnBasis] = None, **kwargs) -> DetectionResult:
    """Detect one comb symbol with PN tracking (builds the PN basis from ``cfg`` if needed)."""
    basis = basis or basis_for(cfg.n_subcarriers, cfg.pn_var_sd, cfg.subspace_dim)
    rx = CombReceiver(cfg, know, basis, **kwargs)
    return rx.run(y, comb.values[comb.pilot_indices])
