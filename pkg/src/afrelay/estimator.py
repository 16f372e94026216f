"""Joint MAP estimation of channels, CFO and phase noise from one training block.

The relay-to-destination CFO and PN come first, directly from ``y_r``. The
source-to-destination CFO, PN coordinates ``eta`` and both channels are then
refined by block coordinate descent on the negative log-likelihood, with the
relay-noise covariance held at its previous value inside each block.

Every inverse is a linear solve. Hermitian systems go through Cholesky, with a
small diagonal ridge added when the system is badly conditioned.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

from .pn_subspace import PnBasis, basis_for, pn_covariance
from .signal_model import (
    SimConfig,
    build_G,
    build_toeplitz_pair,
    cfo_phasor,
    freq_regressor,
)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the iterative estimator.

    Parameters
    ----------
    max_iters : int
        Hard cap on coordinate-descent sweeps.
    epsilon : float, optional
        Stop when the objective changes by at most this much between sweeps.
        ``None`` means ``1e-6 * N``.
    cfo_step : float
        Coarse grid spacing (subcarrier spacings) of the exhaustive CFO searches.
    refine_levels : int
        Number of 10x finer grid passes around the coarse minimizer.
    cond_limit : float
        Condition number above which a ridge is added to a solve.
    patience : int
        Consecutive objective increases tolerated before stopping early.
    phi_sd_init : float, optional
        Warm start for the source-to-destination CFO, skipping its grid search.
    """

    max_iters: int = 200
    epsilon: Optional[float] = None
    cfo_step: float = 1e-2
    refine_levels: int = 3
    cond_limit: float = 1e12
    patience: int = 3
    phi_sd_init: Optional[float] = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.cfo_step <= 0:
            raise ValueError("cfo_step must be positive")


@dataclass
class EstimatorState:
    phi_sd: float
    phi_rd: float
    theta_sd: np.ndarray
    theta_rd: np.ndarray
    eta_sd: np.ndarray
    h_hat: np.ndarray
    g_hat: np.ndarray
    sigma_r: np.ndarray
    iteration: int = 0
    nllf_trace: list = field(default_factory=list)

    @property
    def c_hat(self) -> np.ndarray:
        return np.convolve(self.g_hat, self.h_hat)

    def copy(self) -> "EstimatorState":
        return EstimatorState(
            phi_sd=self.phi_sd, phi_rd=self.phi_rd,
            theta_sd=self.theta_sd.copy(), theta_rd=self.theta_rd.copy(),
            eta_sd=self.eta_sd.copy(), h_hat=self.h_hat.copy(), g_hat=self.g_hat.copy(),
            sigma_r=self.sigma_r.copy(), iteration=self.iteration,
            nllf_trace=list(self.nllf_trace),
        )


@dataclass
class EstimatorOutput:
    h: np.ndarray
    g: np.ndarray
    phi_sd: float
    theta_sd: np.ndarray
    eta_sd: np.ndarray
    phi_rd: float
    theta_rd: np.ndarray
    nllf_trace: np.ndarray
    iterations: int
    converged: bool
    diverged: bool
    sigma_r: np.ndarray
    ridge_used: bool = False

    @property
    def c(self) -> np.ndarray:
        return np.convolve(self.g, self.h)


# ----------------------------------------------------------------------------
# linear-algebra helpers


class _Solver:
    """Hermitian solves with a conditioning guard; remembers whether a ridge fired."""

    def __init__(self, cond_limit: float):
        self.cond_limit = cond_limit
        self.ridge_used = False

    def _regularize(self, a: np.ndarray) -> np.ndarray:
        a = 0.5 * (a + a.conj().T)
        w = np.linalg.eigvalsh(a)
        wmax = float(np.abs(w).max()) if w.size else 0.0
        if wmax == 0.0 or w.min() <= wmax / self.cond_limit:
            self.ridge_used = True
            n = a.shape[0]
            tau = 1e-10 * max(float(np.trace(a).real), 1e-300) / n
            a = a + tau * np.eye(n)
        return a

    def factor(self, a: np.ndarray):
        """Cholesky factor of a Hermitian PD matrix, ridged if needed."""
        try:
            f = sla.cho_factor(a, lower=True, check_finite=False)
            d = np.abs(np.diag(f[0]))
            if d.min() ** 2 * self.cond_limit >= d.max() ** 2:
                return f
        except np.linalg.LinAlgError:
            pass
        return sla.cho_factor(self._regularize(a), lower=True, check_finite=False)

    def solve(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self.factor(a), b, check_finite=False)


def _logdet_from_chol(f) -> float:
    return 2.0 * float(np.sum(np.log(np.abs(np.diag(f[0])))))


def _grid_minimize(objective, lo: float, hi: float, step: float, levels: int) -> float:
    """Exhaustive grid search with ``levels`` 10x refinements around the best point.

    ``objective`` maps a 1-D array of candidates to a 1-D array of values.
    """
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n)
    best = grid[int(np.argmin(objective(grid)))]
    for _ in range(levels):
        fine = step / 10.0
        grid = best + fine * np.arange(-10, 11)
        grid = grid[(grid >= lo - 1e-12) & (grid <= hi + 1e-12)]
        best = grid[int(np.argmin(objective(grid)))]
        step = fine
    return float(best)


def _cfo_range(spec) -> Tuple[float, float]:
    if np.ndim(spec) == 0:
        v = float(spec)
        return v - 0.5, v + 0.5
    lo, hi = spec
    return float(lo), float(hi)


# ----------------------------------------------------------------------------


class JointEstimator:
    """Algorithm state and update rules for one training block.

    Parameters
    ----------
    cfg : SimConfig
        Link configuration; noise variances, powers and tap counts come from here.
    y_s, y_r : ndarray
        Received training blocks (source path, relay path).
    s_s, s_r : ndarray
        Known frequency-domain training symbols.
    est_cfg : EstimatorConfig, optional
    basis_sd, basis_rd : PnBasis, optional
        Precomputed PN bases; built from ``cfg`` when omitted.
    """

    def __init__(self, cfg: SimConfig, y_s, y_r, s_s, s_r,
                 est_cfg: Optional[EstimatorConfig] = None,
                 basis_sd: Optional[PnBasis] = None,
                 basis_rd: Optional[PnBasis] = None):
        n = cfg.n_subcarriers
        for name, v in (("y_s", y_s), ("y_r", y_r), ("s_s", s_s), ("s_r", s_r)):
            if np.shape(v) != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        self.cfg = cfg
        self.est_cfg = est_cfg or EstimatorConfig()
        self.n = n
        self.alpha = cfg.gain
        self.var_r = cfg.noise_var_relay
        self.var_d = cfg.noise_var_dest
        self.y_s = np.asarray(y_s, dtype=complex)
        self.y_r = np.asarray(y_r, dtype=complex)
        self.s_s = np.asarray(s_s, dtype=complex)
        self.s_r = np.asarray(s_r, dtype=complex)
        self.p_relay = float(np.mean(np.abs(self.s_r) ** 2))
        self.x_s = freq_regressor(self.s_s, cfg.cascade_len)
        self.x_r = freq_regressor(self.s_r, cfg.l_g)
        m = cfg.subspace_dim
        self.basis_sd = basis_sd or basis_for(n, cfg.pn_var_sd, m)
        self.basis_rd = basis_rd or basis_for(n, cfg.pn_var_rd, m)
        self.psi_sd = pn_covariance(n, cfg.pn_var_sd)
        self.psi_rd = pn_covariance(n, cfg.pn_var_rd)
        self.ramp = 2j * np.pi * np.arange(n) / n
        self.solver = _Solver(self.est_cfg.cond_limit)
        self._ggh_cache = (None, None)
        self.epsilon = self.est_cfg.epsilon if self.est_cfg.epsilon is not None else 1e-6 * n

    # -- model pieces -------------------------------------------------------

    def _ggh(self, g) -> np.ndarray:
        key = np.asarray(g, dtype=complex).tobytes()
        if self._ggh_cache[0] != key:
            gm = build_G(g, self.n)
            self._ggh_cache = (key, gm @ gm.conj().T)
        return self._ggh_cache[1]

    def sigma_r(self, g, theta, phi) -> np.ndarray:
        """Exact relay-noise covariance at the destination."""
        u = np.exp(1j * theta) * cfo_phasor(phi, self.n)
        k = (self.alpha ** 2 * self.var_r) * (u[:, None] * self._ggh(g) * u.conj()[None, :])
        return k + self.var_d * np.eye(self.n)

    def sigma_r_prior(self, g, phi) -> np.ndarray:
        """Covariance with the unknown PN replaced by its second-order expectation."""
        gm = build_G(g, self.n)
        u = cfo_phasor(phi, self.n)
        omega = (self.alpha ** 2 * self.var_r) * (u[:, None] * (gm @ gm.conj().T) * u.conj()[None, :])
        return omega + omega * self.psi_sd + self.var_d * np.eye(self.n)

    def mean_s(self, c, theta, phi) -> np.ndarray:
        return self.alpha * np.exp(1j * theta) * cfo_phasor(phi, self.n) * (self.x_s @ c)

    def mean_r(self, g, theta_rd, phi_rd) -> np.ndarray:
        return np.exp(1j * theta_rd) * cfo_phasor(phi_rd, self.n) * (self.x_r @ g)

    def _gls(self, sig_factor, a: np.ndarray, y: np.ndarray,
             extra: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        """Generalized LS; ``extra=(A2, y2)`` appends a block with white noise ``var_d``."""
        w = sla.cho_solve(sig_factor, a, check_finite=False)
        normal = a.conj().T @ w
        rhs = w.conj().T @ y
        if extra is not None:
            a2, y2 = extra
            normal = normal + (a2.conj().T @ a2) / self.var_d
            rhs = rhs + (a2.conj().T @ y2) / self.var_d
        return self.solver.solve(normal, rhs)

    # -- relay hop ----------------------------------------------------------

    def _relay_terms(self):
        n, lg = self.n, self.cfg.l_g
        f = np.fft.fft(np.eye(n), norm="ortho")
        v = f[:, lg:]
        fh_s = f.conj().T * self.s_r[None, :]
        a = self.y_r.conj()[:, None] * (fh_s @ v)
        return a @ a.conj().T

    def _relay_b(self, aa: np.ndarray, phi: float) -> np.ndarray:
        v = cfo_phasor(phi, self.n)
        return aa * np.outer(v, v.conj())

    def relay_cfo_objective(self, phis: np.ndarray, aa: Optional[np.ndarray] = None) -> np.ndarray:
        """Relay-hop CFO objective on a batch of candidate CFOs."""
        aa = self._relay_terms() if aa is None else aa
        n = self.n
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        cpen = self.var_d * self.p_relay / 2.0
        psi = self.psi_rd
        out = np.empty(phis.size)
        chunk = 64
        for start in range(0, phis.size, chunk):
            ph = phis[start:start + chunk]
            v = np.exp(2j * np.pi * np.outer(ph, np.arange(n)) / n)
            bdot = aa[None] * (v[:, :, None] * v.conj()[:, None, :])
            r = bdot.real
            b = bdot.imag.sum(axis=2)
            total = bdot.sum(axis=(1, 2)).real
            # [R + c Psi^{-1}]^{-1} = Psi (R Psi + c I)^{-1}; valid for singular Psi
            mat = r @ psi + cpen * np.eye(n)[None]
            z = np.linalg.solve(mat, b[..., None])[..., 0]
            quad = np.einsum("ki,ki->k", b @ psi, z)
            out[start:start + chunk] = total - quad
        return out

    def estimate_rd_cfo(self) -> float:
        aa = self._relay_terms()
        lo, hi = _cfo_range(self.cfg.cfo_rd)
        return _grid_minimize(lambda p: self.relay_cfo_objective(p, aa), lo, hi,
                              self.est_cfg.cfo_step, self.est_cfg.refine_levels)

    def estimate_rd_pn(self, phi_rd: float) -> np.ndarray:
        bdot = self._relay_b(self._relay_terms(), phi_rd)
        pi = self.basis_rd.pi
        lhs = pi.T @ bdot.real @ pi + (self.var_d * self.p_relay / 2.0) * np.eye(pi.shape[1])
        rhs = pi.T @ bdot.imag.sum(axis=1)
        return pi @ np.linalg.solve(lhs, rhs)

    # -- initialization -----------------------------------------------------

    def sd_cfo_objective(self, phis: np.ndarray, g0: np.ndarray) -> np.ndarray:
        """Profiled (over h) weighted LS cost of the source path, vectorized in CFO."""
        n = self.n
        gm = build_G(g0, n)
        sig0 = (self.alpha ** 2 * self.var_r) * (gm @ gm.conj().T) + self.var_d * np.eye(n)
        f = self.solver.factor(sig0)
        gt, _ = build_toeplitz_pair(np.zeros(self.cfg.l_h), g0)
        x0 = self.alpha * (self.x_s @ gt)
        wx = sla.cho_solve(f, x0, check_finite=False)
        normal = x0.conj().T @ wx
        w0 = sla.cho_solve(f, np.eye(n, dtype=complex), check_finite=False)
        proj = w0 - wx @ self.solver.solve(normal, wx.conj().T)
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        z = np.exp(-2j * np.pi * np.outer(phis, np.arange(n)) / n) * self.y_s[None, :]
        return np.einsum("ki,ij,kj->k", z.conj(), proj, z).real

    def init_estimates(self, phi_rd: float, theta_rd: np.ndarray) -> EstimatorState:
        n = self.n
        derot = np.exp(-1j * (theta_rd + 2 * np.pi * np.arange(n) * phi_rd / n))
        g0 = self.x_r.conj().T @ (derot * self.y_r) / (n * self.p_relay)
        if self.est_cfg.phi_sd_init is not None:
            phi0 = float(self.est_cfg.phi_sd_init)
        else:
            lo, hi = _cfo_range(self.cfg.cfo_sd)
            phi0 = _grid_minimize(lambda p: self.sd_cfo_objective(p, g0), lo, hi,
                                  self.est_cfg.cfo_step, self.est_cfg.refine_levels)
        gm = build_G(g0, n)
        u = cfo_phasor(phi0, n)
        sig_phi = (self.alpha ** 2 * self.var_r) * (u[:, None] * (gm @ gm.conj().T) * u.conj()[None, :]) \
            + self.var_d * np.eye(n)
        gt, _ = build_toeplitz_pair(np.zeros(self.cfg.l_h), g0)
        x0 = self.alpha * u[:, None] * (self.x_s @ gt)
        h0 = self._gls(self.solver.factor(sig_phi), x0, self.y_s)
        return EstimatorState(
            phi_sd=phi0, phi_rd=phi_rd,
            theta_sd=np.zeros(n), theta_rd=np.asarray(theta_rd, dtype=float),
            eta_sd=np.zeros(self.basis_sd.m), h_hat=h0, g_hat=g0,
            sigma_r=self.sigma_r_prior(g0, phi0),
        )

    # -- coordinate updates ---------------------------------------------------

    def update_pn(self, st: EstimatorState) -> np.ndarray:
        """Linearized MAP update of ``eta``; refreshes ``st.sigma_r``."""
        a = self.mean_s(st.c_hat, np.zeros(self.n), st.phi_sd)
        ybar = self.y_s - a
        bmat = 1j * a[:, None] * self.basis_sd.pi
        f = self.solver.factor(st.sigma_r)
        wb = sla.cho_solve(f, bmat, check_finite=False)
        lhs = (bmat.conj().T @ wb).real + 0.5 * np.eye(self.basis_sd.m)
        rhs = (wb.conj().T @ ybar).real
        eta = self.solver.solve(lhs, rhs).real
        st.eta_sd = eta
        st.theta_sd = self.basis_sd.pi @ eta
        st.sigma_r = self.sigma_r(st.g_hat, st.theta_sd, st.phi_sd)
        return eta

    def update_g(self, st: EstimatorState) -> np.ndarray:
        _, ht = build_toeplitz_pair(st.h_hat, st.g_hat)
        u = np.exp(1j * st.theta_sd) * cfo_phasor(st.phi_sd, self.n)
        c1 = self.alpha * u[:, None] * (self.x_s @ ht)
        ur = np.exp(1j * st.theta_rd) * cfo_phasor(st.phi_rd, self.n)
        c2 = ur[:, None] * self.x_r
        g = self._gls(self.solver.factor(st.sigma_r), c1, self.y_s, extra=(c2, self.y_r))
        st.g_hat = g
        st.sigma_r = self.sigma_r(g, st.theta_sd, st.phi_sd)
        return g

    def update_h(self, st: EstimatorState) -> np.ndarray:
        gt, _ = build_toeplitz_pair(st.h_hat, st.g_hat)
        u = np.exp(1j * st.theta_sd) * cfo_phasor(st.phi_sd, self.n)
        dmat = self.alpha * u[:, None] * (self.x_s @ gt)
        h = self._gls(self.solver.factor(st.sigma_r), dmat, self.y_s)
        st.h_hat = h
        return h

    def update_cfo(self, st: EstimatorState) -> float:
        """One Newton-type step on the source CFO; refreshes ``st.sigma_r``."""
        d = self.alpha * np.exp(1j * st.theta_sd) * (self.x_s @ st.c_hat)
        lam = cfo_phasor(st.phi_sd, self.n)
        ld = lam * d
        dd = self.ramp * ld
        f = self.solver.factor(st.sigma_r)
        wdd = sla.cho_solve(f, dd, check_finite=False)
        den = float(np.real(np.vdot(dd, wdd)))
        if den > 0 and np.isfinite(den):
            num = float(np.real(np.vdot(wdd, self.y_s - ld)))
            st.phi_sd = st.phi_sd + num / den
        st.sigma_r = self.sigma_r(st.g_hat, st.theta_sd, st.phi_sd)
        return st.phi_sd

    # -- objective ----------------------------------------------------------

    def nllf_params(self, phi_sd, eta, h, g, theta_rd, phi_rd, sig=None) -> float:
        """Objective at the given parameters; ``sig`` may pass a precomputed exact covariance."""
        theta = self.basis_sd.pi @ np.asarray(eta, dtype=float)
        if sig is None:
            sig = self.sigma_r(g, theta, phi_sd)
        try:
            f = sla.cho_factor(sig, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise ValueError("relay-noise covariance is not positive definite") from exc
        c = np.convolve(g, h)
        rs = self.y_s - self.mean_s(c, theta, phi_sd)
        rr = self.y_r - self.mean_r(g, theta_rd, phi_rd)
        quad = float(np.real(np.vdot(rs, sla.cho_solve(f, rs, check_finite=False))))
        quad += float(np.real(np.vdot(rr, rr))) / self.var_d
        logdet = _logdet_from_chol(f) + self.n * np.log(self.var_d)
        return logdet + quad + 0.5 * float(np.dot(eta, eta))

    def negative_llf(self, st: EstimatorState, exact_sigma: bool = False) -> float:
        """Objective at the state; ``exact_sigma`` asserts ``st.sigma_r`` matches the state."""
        return self.nllf_params(st.phi_sd, st.eta_sd, st.h_hat, st.g_hat, st.theta_rd, st.phi_rd,
                                st.sigma_r if exact_sigma else None)

    # -- driver -------------------------------------------------------------

    def sweep(self, st: EstimatorState) -> float:
        self.update_pn(st)
        self.update_g(st)
        self.update_h(st)
        self.update_cfo(st)
        st.iteration += 1
        e = self.negative_llf(st, exact_sigma=True)
        st.nllf_trace.append(e)
        return e

    def run(self) -> EstimatorOutput:
        phi_rd = self.estimate_rd_cfo()
        theta_rd = self.estimate_rd_pn(phi_rd)
        st = self.init_estimates(phi_rd, theta_rd)
        e_prev = self.negative_llf(st)
        st.nllf_trace.append(e_prev)
        best, best_e = st.copy(), e_prev
        rises = 0
        converged = diverged = False
        for _ in range(self.est_cfg.max_iters):
            e = self.sweep(st)
            if not np.isfinite(e):
                diverged = True
                break
            if e < best_e:
                best, best_e = st.copy(), e
            rises = rises + 1 if e > e_prev else 0
            if abs(e - e_prev) <= self.epsilon:
                converged = True
                break
            if rises >= self.est_cfg.patience:
                diverged = True
                break
            e_prev = e
        final = st
        if diverged:
            warnings.warn("objective increased repeatedly; returning best state", RuntimeWarning)
            final = best
            final.nllf_trace = st.nllf_trace
            final.iteration = st.iteration
        return EstimatorOutput(
            h=final.h_hat, g=final.g_hat, phi_sd=final.phi_sd, theta_sd=final.theta_sd,
            eta_sd=final.eta_sd, phi_rd=final.phi_rd, theta_rd=final.theta_rd,
            nllf_trace=np.asarray(st.nllf_trace), iterations=st.iteration,
            converged=converged, diverged=diverged, sigma_r=final.sigma_r,
            ridge_used=self.solver.ridge_used,
        )


def run_joint_estimation(y_s, y_r, s_s, s_r, cfg: SimConfig,
                         est_cfg: Optional[EstimatorConfig] = None,
                         basis_sd: Optional[PnBasis] = None,
                         basis_rd: Optional[PnBasis] = None) -> EstimatorOutput:
    """Run the full training-phase estimator on one block."""
    return JointEstimator(cfg, y_s, y_r, s_s, s_r, est_cfg, basis_sd, basis_rd).run()
