"""Hybrid Cramér–Rao bound for the training-phase estimation problem.

Parameter vector layout (length ``Q = 2(N + L_g + L_h)``), 0-based:

==========================  ==============================================
index                       meaning
==========================  ==============================================
0                           source-to-destination CFO
1 .. N                      source-to-destination PN samples 0..N-1
N+1                         relay-to-destination CFO
N+2 .. 2N+1                 relay-to-destination PN samples 0..N-1
2N+2                        first relay-destination tap (real, >= 0)
2N+3 .. 2N+L_g+1            Re of relay-destination taps 1..L_g-1
2N+L_g+2 .. 2N+2L_g         Im of relay-destination taps 1..L_g-1
2N+2L_g+1                   first source-relay tap (real, >= 0)
next L_h-1                  Re of source-relay taps 1..L_h-1
last L_h-1                  Im of source-relay taps 1..L_h-1
==========================  ==============================================

Channel phases are pinned by rotating each channel so its first tap is real;
the removed phases are absorbed into the (constant) training matrices, which
leaves the mean and covariance of the observations unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

from .pn_subspace import pn_covariance, pn_precision
from .signal_model import (
    LinkState,
    SimConfig,
    build_G,
    build_toeplitz_pair,
    cfo_phasor,
    freq_regressor,
    generate_wiener_pn,
)


@dataclass(frozen=True)
class Layout:
    n: int
    l_g: int
    l_h: int

    @property
    def q(self) -> int:
        return 2 * (self.n + self.l_g + self.l_h)

    @property
    def phi_sd(self) -> int:
        return 0

    @property
    def theta_sd(self) -> slice:
        return slice(1, self.n + 1)

    @property
    def phi_rd(self) -> int:
        return self.n + 1

    @property
    def theta_rd(self) -> slice:
        return slice(self.n + 2, 2 * self.n + 2)

    @property
    def g_block(self) -> slice:
        start = 2 * self.n + 2
        return slice(start, start + 2 * self.l_g - 1)

    @property
    def h_block(self) -> slice:
        start = 2 * self.n + 2 * self.l_g + 1
        return slice(start, start + 2 * self.l_h - 1)

    @property
    def cov_params(self) -> np.ndarray:
        """Indices whose derivative of the relay-noise covariance is nonzero."""
        idx = [self.phi_sd] + list(range(*self.theta_sd.indices(self.q)))
        idx += list(range(*self.g_block.indices(self.q)))
        return np.asarray(idx)


def _split_taps(x: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`_join_taps` on a real block of size ``2 length - 1``."""
    out = np.empty(length, dtype=complex)
    out[0] = x[0]
    out[1:] = x[1:length] + 1j * x[length:]
    return out


def _join_taps(taps: np.ndarray) -> np.ndarray:
    return np.concatenate(([taps[0].real], taps[1:].real, taps[1:].imag))


@dataclass
class BoundProblem:
    """Everything that stays fixed while the parameter vector varies."""

    cfg: SimConfig
    layout: Layout
    x_s: np.ndarray
    x_r: np.ndarray
    alpha: float
    phase_g: float
    phase_h: float

    @classmethod
    def from_state(cls, cfg: SimConfig, state: LinkState, s_s, s_r) -> "BoundProblem":
        return cls(
            cfg=cfg,
            layout=Layout(cfg.n_subcarriers, cfg.l_g, cfg.l_h),
            x_s=freq_regressor(np.asarray(s_s, dtype=complex), cfg.cascade_len),
            x_r=freq_regressor(np.asarray(s_r, dtype=complex), cfg.l_g),
            alpha=state.alpha,
            phase_g=float(np.angle(state.g[0])),
            phase_h=float(np.angle(state.h[0])),
        )

    def pack(self, state: LinkState) -> np.ndarray:
        lay = self.layout
        lam = np.empty(lay.q)
        lam[lay.phi_sd] = state.phi_sd
        lam[lay.theta_sd] = state.theta_sd
        lam[lay.phi_rd] = state.phi_rd
        lam[lay.theta_rd] = state.theta_rd
        lam[lay.g_block] = _join_taps(state.g * np.exp(-1j * self.phase_g))
        lam[lay.h_block] = _join_taps(state.h * np.exp(-1j * self.phase_h))
        return lam

    def unpack(self, lam: np.ndarray):
        """Return ``(phi_sd, theta_sd, phi_rd, theta_rd, g_u, h_u)`` with first taps real."""
        lay = self.layout
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (lay.q,):
            raise ValueError(f"parameter vector must have length {lay.q}")
        return (lam[lay.phi_sd], lam[lay.theta_sd], lam[lay.phi_rd], lam[lay.theta_rd],
                _split_taps(lam[lay.g_block], lay.l_g), _split_taps(lam[lay.h_block], lay.l_h))

    # -- model ----------------------------------------------------------------

    def mean(self, lam: np.ndarray) -> np.ndarray:
        phi, th, phi_r, th_r, g, h = self.unpack(lam)
        n = self.layout.n
        rot = np.exp(1j * (self.phase_g + self.phase_h))
        mu_s = self.alpha * rot * np.exp(1j * th) * cfo_phasor(phi, n) * (self.x_s @ np.convolve(g, h))
        mu_r = np.exp(1j * self.phase_g) * np.exp(1j * th_r) * cfo_phasor(phi_r, n) * (self.x_r @ g)
        return np.concatenate((mu_s, mu_r))

    def _kernel(self, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        phi, th, _, _, g, _ = self.unpack(lam)
        n = self.layout.n
        gm = build_G(g, n)
        u = np.exp(1j * th) * cfo_phasor(phi, n)
        scale = self.alpha ** 2 * self.cfg.noise_var_relay
        k = scale * (u[:, None] * (gm @ gm.conj().T) * u.conj()[None, :])
        return k, gm, u

    def cov_relay(self, lam: np.ndarray) -> np.ndarray:
        k, _, _ = self._kernel(lam)
        return k + self.cfg.noise_var_dest * np.eye(self.layout.n)

    # -- derivatives ------------------------------------------------------------

    def mean_derivatives(self, lam: np.ndarray) -> np.ndarray:
        """``(2N, Q)`` complex Jacobian of :meth:`mean`."""
        lay = self.layout
        n = lay.n
        phi, th, phi_r, th_r, g, h = self.unpack(lam)
        mu = self.mean(lam)
        mu_s, mu_r = mu[:n], mu[n:]
        jac = np.zeros((2 * n, lay.q), dtype=complex)
        ramp = 2j * np.pi * np.arange(n) / n
        jac[:n, lay.phi_sd] = ramp * mu_s
        jac[np.arange(n), 1 + np.arange(n)] = 1j * mu_s
        jac[n:, lay.phi_rd] = ramp * mu_r
        jac[n + np.arange(n), lay.phi_rd + 1 + np.arange(n)] = 1j * mu_r

        rot_s = self.alpha * np.exp(1j * (self.phase_g + self.phase_h)) * np.exp(1j * th) * cfo_phasor(phi, n)
        rot_r = np.exp(1j * self.phase_g) * np.exp(1j * th_r) * cfo_phasor(phi_r, n)
        gt, ht = build_toeplitz_pair(h, g)
        e_g = np.vstack((rot_s[:, None] * (self.x_s @ ht), rot_r[:, None] * self.x_r))
        k_h = np.vstack((rot_s[:, None] * (self.x_s @ gt), np.zeros((n, lay.l_h), dtype=complex)))
        jac[:, lay.g_block] = np.hstack((e_g, 1j * e_g[:, 1:]))
        jac[:, lay.h_block] = np.hstack((k_h, 1j * k_h[:, 1:]))
        return jac

    def cov_derivatives(self, lam: np.ndarray) -> np.ndarray:
        """``(P, N, N)`` derivatives of the relay covariance for ``layout.cov_params``."""
        lay = self.layout
        n = lay.n
        k, gm, u = self._kernel(lam)
        out = np.empty((lay.cov_params.size, n, n), dtype=complex)
        m = np.arange(n)
        out[0] = k * (2j * np.pi * np.subtract.outer(m, m) / n)
        for i in range(n):
            d = np.zeros((n, n), dtype=complex)
            d[i, :] += 1j * k[i, :]
            d[:, i] -= 1j * k[:, i]
            out[1 + i] = d
        scale = self.alpha ** 2 * self.cfg.noise_var_relay
        uu = u[:, None] * u.conj()[None, :]
        lg = lay.l_g
        pos = 1 + n
        for kk in range(lg):
            e = np.zeros(lg)
            e[kk] = 1.0
            sk = build_G(e, n)
            cross = sk @ gm.conj().T
            out[pos + kk] = scale * uu * (cross + cross.conj().T)
            if kk > 0:
                out[pos + lg - 1 + kk] = scale * uu * (1j * (cross - cross.conj().T))
        return out


def fim_at(prob: BoundProblem, lam: np.ndarray) -> np.ndarray:
    """Exact Gaussian Fisher information of the stacked observation at ``lam``.

    Computed as ``2 Re(J^H S^{-1} J) + Tr(S^{-1} dS_i S^{-1} dS_j)``; only the
    relay-path covariance depends on the parameters.
    """
    lay = prob.layout
    n = lay.n
    var_d = prob.cfg.noise_var_dest
    sig = prob.cov_relay(lam)
    try:
        chol = np.linalg.cholesky(sig)
    except np.linalg.LinAlgError as exc:
        raise ValueError("relay-noise covariance is not positive definite") from exc
    lin = sla.solve_triangular(chol, np.eye(n), lower=True)

    jac = prob.mean_derivatives(lam)
    wj = np.vstack((lin @ jac[:n], jac[n:] / np.sqrt(var_d)))
    fim = 2.0 * (wj.conj().T @ wj).real

    # whitened covariance derivatives  L^{-1} dS L^{-H}
    ds = prob.cov_derivatives(lam)
    wds = lin[None] @ ds @ lin.conj().T[None]
    flat = wds.reshape(ds.shape[0], -1)
    # Tr(A B) = sum_pq A_pq conj(B_pq) for Hermitian B
    upsilon = (flat @ flat.conj().T).real
    idx = lay.cov_params
    fim[np.ix_(idx, idx)] += upsilon
    return 0.5 * (fim + fim.T)


def prior_information(cfg: SimConfig) -> np.ndarray:
    """Block-diagonal PN prior information, zero on the deterministic parameters."""
    lay = Layout(cfg.n_subcarriers, cfg.l_g, cfg.l_h)
    out = np.zeros((lay.q, lay.q))
    for sl, var in ((lay.theta_sd, cfg.pn_var_sd), (lay.theta_rd, cfg.pn_var_rd)):
        if var > 0:
            out[sl, sl] = pn_precision(lay.n, var)
        else:
            warnings.warn("zero PN variance; using pseudo-inverse prior", RuntimeWarning)
            out[sl, sl] = np.linalg.pinv(pn_covariance(lay.n, var))
    return out


def bim(prob: BoundProblem, state: LinkState, n_mc: int, rng: np.random.Generator,
        draw_pn: bool = True) -> np.ndarray:
    """Bayesian information: FIM averaged over PN draws plus prior information.

    ``state`` supplies the deterministic parameters. With ``draw_pn=False`` the
    PN in ``state`` is used for every draw.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    cfg = prob.cfg
    lay = prob.layout
    lam = prob.pack(state)
    acc = np.zeros((lay.q, lay.q))
    for _ in range(n_mc):
        if draw_pn:
            lam[lay.theta_sd] = generate_wiener_pn(lay.n, cfg.pn_var_sd, rng)
            lam[lay.theta_rd] = generate_wiener_pn(lay.n, cfg.pn_var_rd, rng)
        acc += fim_at(prob, lam)
    return acc / n_mc + prior_information(cfg)


def transform_matrix(layout: Layout) -> np.ndarray:
    """``(Q-2, Q)`` map from the parameter vector to identifiable quantities.

    Each hop's CFO and PN fold into ``delta_m = theta_m - theta_0 + 2 pi m phi / N``
    (``m = 0..N-1``, so row 0 of each hop is identically zero). Channel rows
    pass through unchanged.
    """
    n, q = layout.n, layout.q
    xi = np.zeros((q - 2, q))
    m = np.arange(n)
    for hop, (phi_col, th) in enumerate(((layout.phi_sd, layout.theta_sd),
                                          (layout.phi_rd, layout.theta_rd))):
        rows = hop * n + m
        xi[rows, phi_col] = 2 * np.pi * m / n
        xi[rows, th.start + m] += 1.0
        xi[rows, th.start] -= 1.0
    tail = np.arange(2 * n + 2, q)
    xi[2 * n + tail - (2 * n + 2), tail] = 1.0
    return xi


@dataclass
class BoundReport:
    fim_avg: np.ndarray
    bim: np.ndarray
    xi: np.ndarray
    hcrlb_mod: np.ndarray
    mse_g: float
    mse_h: float
    mse_cfo_pn: float


def transform_and_extract(b: np.ndarray, cfg: SimConfig) -> BoundReport:
    lay = Layout(cfg.n_subcarriers, cfg.l_g, cfg.l_h)
    try:
        binv = np.linalg.inv(b)
        if not np.all(np.isfinite(binv)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        warnings.warn("BIM is singular; using pseudo-inverse", RuntimeWarning)
        binv = np.linalg.pinv(b)
    xi = transform_matrix(lay)
    mod = xi @ binv @ xi.T
    mod = 0.5 * (mod + mod.T)
    d = np.diag(mod)
    n = lay.n
    g_rows = slice(2 * n, 2 * n + 2 * lay.l_g - 1)
    h_rows = slice(g_rows.stop, g_rows.stop + 2 * lay.l_h - 1)
    return BoundReport(
        fim_avg=b - prior_information(cfg), bim=b, xi=xi, hcrlb_mod=mod,
        mse_g=float(d[g_rows].sum()), mse_h=float(d[h_rows].sum()),
        mse_cfo_pn=float(d[:n].sum()),
    )


def bound_for_state(cfg: SimConfig, state: LinkState, s_s, s_r, n_mc: int,
                    rng: np.random.Generator) -> BoundReport:
    """HCRLB for one channel/CFO realization, averaging the FIM over PN draws."""
    prob = BoundProblem.from_state(cfg, state, s_s, s_r)
    return transform_and_extract(bim(prob, state, n_mc, rng), cfg)
