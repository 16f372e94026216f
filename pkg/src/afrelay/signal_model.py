"""Discrete baseband model of the two-hop amplify-and-forward OFDM link.

Everything here works on the N post-CP samples of one OFDM symbol. The CP is
not simulated sample by sample: with ``cp_len >= L`` the source-side channel
acts as a circular convolution, so observations are synthesized directly from
that model. ``cp_len`` only enters the relay gain.

Index conventions are 0-based throughout. A CFO ``phi`` (in subcarrier
spacings) turns into the per-sample phasor ``exp(j*2*pi*m*phi/N)`` for
``m = 0..N-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

CfoSpec = Union[float, Tuple[float, float]]


@dataclass(frozen=True)
class SimConfig:
    """Scenario parameters.

    CFO fields accept either a fixed value or a ``(lo, hi)`` range that is
    sampled uniformly per realization. ``alpha=None`` derives the relay gain
    from the power budget (:func:`relay_gain`); the default of 1 follows the
    usual simulation convention of normalizing the relay output power.
    """

    n_subcarriers: int = 64
    cp_len: int = 16
    l_h: int = 6
    l_g: int = 6
    pn_var_sd: float = 1e-4
    pn_var_rd: float = 1e-4
    cfo_sd: CfoSpec = (-0.4, 0.4)
    cfo_rd: CfoSpec = (-0.2, 0.2)
    p_src: float = 1.0
    p_relay: float = 1.0
    noise_var_relay: float = 1.0
    noise_var_dest: float = 1.0
    subspace_dim: int = 32
    pilot_count: int = 32
    alpha: Optional[float] = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.l_h < 1 or self.l_g < 1:
            raise ValueError("tap counts must be >= 1")
        if self.cp_len < self.cascade_len - 1:
            raise ValueError(
                f"cp_len={self.cp_len} too short for cascade length {self.cascade_len}"
            )
        if not 0 < self.subspace_dim <= self.n_subcarriers:
            raise ValueError("subspace_dim must satisfy 0 < M <= N")
        if not self.subspace_dim <= self.pilot_count <= self.n_subcarriers:
            raise ValueError("pilot_count must satisfy M <= P <= N")
        if self.pn_var_sd < 0 or self.pn_var_rd < 0:
            raise ValueError("phase-noise variances must be nonnegative")
        if self.noise_var_relay < 0 or self.noise_var_dest <= 0:
            raise ValueError("noise variances must be positive")

    @property
    def cascade_len(self) -> int:
        return self.l_h + self.l_g - 1

    @property
    def pilot_indices(self) -> np.ndarray:
        """Uniform comb: ``pilot_count`` subcarriers spread evenly over N."""
        n, p = self.n_subcarriers, self.pilot_count
        return np.floor(np.arange(p) * n / p).astype(int)

    @property
    def data_indices(self) -> np.ndarray:
        mask = np.ones(self.n_subcarriers, dtype=bool)
        mask[self.pilot_indices] = False
        return np.flatnonzero(mask)

    @property
    def gain(self) -> float:
        return relay_gain(self) if self.alpha is None else float(self.alpha)

    def at_snr(self, snr_db: float) -> "SimConfig":
        """Copy with both transmit powers set to ``10**(snr_db/10)``."""
        p = 10.0 ** (snr_db / 10.0)
        return replace(self, p_src=p, p_relay=p)


@dataclass
class LinkState:
    """One draw of the ground-truth impairments."""

    h: np.ndarray
    g: np.ndarray
    phi_sd: float
    phi_rd: float
    theta_sd: np.ndarray
    theta_rd: np.ndarray
    alpha: float

    @property
    def c(self) -> np.ndarray:
        return np.convolve(self.g, self.h)


@dataclass
class Observation:
    y_s: np.ndarray
    y_r: np.ndarray


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, entry ``(r, k) = exp(-j 2 pi r k / n) / sqrt(n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def cfo_phasor(phi: float, n: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(n) * phi / n)


def generate_wiener_pn(n: int, sigma2: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Wiener phase-noise path with ``theta(-1) = 0``.

    ``size`` prepends batch dimensions, e.g. ``size=1000`` gives a (1000, n) array.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    if sigma2 == 0:
        return np.zeros(shape)
    return np.cumsum(rng.normal(0.0, np.sqrt(sigma2), shape), axis=-1)


def draw_channel(n_taps: int, rng: np.random.Generator) -> np.ndarray:
    """Rayleigh taps with per-tap variance ``1/n_taps`` (unit total energy)."""
    scale = np.sqrt(0.5 / n_taps)
    return scale * (rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps))


def build_G(g: np.ndarray, n: int) -> np.ndarray:
    """N x (N+L_g-1) relay-noise convolution matrix.

    Row ``r`` holds ``[g(L_g-1), ..., g(0)]`` starting at column ``r``, so
    ``G @ v`` is the valid part of ``conv(v, g)``.
    """
    g = np.asarray(g, dtype=complex)
    lg = g.size
    if lg < 1:
        raise ValueError("g must have at least one tap")
    out = np.zeros((n, n + lg - 1), dtype=complex)
    rows = np.arange(n)
    for k, tap in enumerate(g[::-1]):
        out[rows, rows + k] = tap
    return out


def conv_matrix(taps: np.ndarray, n_cols: int) -> np.ndarray:
    """Banded Toeplitz ``T`` with ``T @ x == np.convolve(taps, x)`` for ``len(x) == n_cols``."""
    taps = np.asarray(taps, dtype=complex)
    out = np.zeros((taps.size + n_cols - 1, n_cols), dtype=complex)
    for col in range(n_cols):
        out[col:col + taps.size, col] = taps
    return out


def build_toeplitz_pair(h: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``(G_tilde, H_tilde)`` with ``G_tilde @ h == H_tilde @ g == conv(g, h)``."""
    return conv_matrix(g, len(h)), conv_matrix(h, len(g))


def relay_gain(cfg: SimConfig) -> float:
    """Relay amplification that normalizes the forwarded power to ``p_relay``.

    Uses per-tap source-relay variance ``1/l_h``, so the average received power
    per subcarrier at the relay is ``p_src + noise_var_relay``.
    """
    n = cfg.n_subcarriers
    var_h = 1.0 / cfg.l_h
    p_z = n * cfg.l_h * var_h * cfg.p_src + n * cfg.noise_var_relay
    p_bar = p_z * (cfg.cp_len + n) / n
    if p_bar <= 0 or cfg.p_relay <= 0:
        raise ValueError("relay gain needs positive powers")
    return float(np.sqrt(cfg.p_relay / p_bar))


def freq_regressor(s: np.ndarray, n_taps: int) -> np.ndarray:
    """``F^H diag(s) F_[n_taps]`` as an N x n_taps matrix.

    ``F_[L] = sqrt(N) F[:, :L]``, so the product maps an L-tap impulse response
    to the time-domain symbol it produces (circular convolution with ``F^H s``).
    """
    n = s.size
    spectra = np.fft.fft(np.eye(n, n_taps), axis=0)
    return np.sqrt(n) * np.fft.ifft(s[:, None] * spectra, axis=0)


def filtered_symbol(s: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``F^H diag(s) F_[L] taps`` without forming the matrix."""
    n = s.size
    return np.sqrt(n) * np.fft.ifft(s * np.fft.fft(taps, n))


def qpsk_training(cfg: SimConfig, power: float, rng: np.random.Generator) -> np.ndarray:
    """Constant-modulus QPSK training symbol with per-subcarrier power ``power``."""
    bits = rng.integers(0, 2, size=(cfg.n_subcarriers, 2))
    sym = ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2)
    return np.sqrt(power) * sym


def _draw_cfo(spec: CfoSpec, rng: np.random.Generator) -> float:
    if np.ndim(spec) == 0:
        return float(spec)
    lo, hi = spec
    return float(rng.uniform(lo, hi))


def draw_link_state(cfg: SimConfig, rng: np.random.Generator) -> LinkState:
    n = cfg.n_subcarriers
    return LinkState(
        h=draw_channel(cfg.l_h, rng),
        g=draw_channel(cfg.l_g, rng),
        phi_sd=_draw_cfo(cfg.cfo_sd, rng),
        phi_rd=_draw_cfo(cfg.cfo_rd, rng),
        theta_sd=generate_wiener_pn(n, cfg.pn_var_sd, rng),
        theta_rd=generate_wiener_pn(n, cfg.pn_var_rd, rng),
        alpha=cfg.gain,
    )


def _cnoise(var: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if var == 0:
        return np.zeros(n, dtype=complex)
    return np.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _first_hop(cfg: SimConfig, state: LinkState, s: np.ndarray, theta: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_subcarriers
    if s.shape != (n,):
        raise ValueError(f"symbol must have shape ({n},), got {s.shape}")
    v = _cnoise(cfg.noise_var_relay, n + cfg.l_g - 1, rng)
    w = _cnoise(cfg.noise_var_dest, n, rng)
    relay_noise = build_G(state.g, n) @ v
    rot = np.exp(1j * theta) * cfo_phasor(state.phi_sd, n)
    return state.alpha * rot * (filtered_symbol(s, state.c) + relay_noise) + w


def synthesize_training(cfg: SimConfig, state: LinkState, s_src: np.ndarray,
                        s_relay: np.ndarray, rng: np.random.Generator) -> Observation:
    """Received training symbols at the destination.

    ``y_s`` is the source symbol after both hops (relay noise shaped by ``g``),
    ``y_r`` the relay's own training symbol over the second hop only.
    """
    n = cfg.n_subcarriers
    if s_relay.shape != (n,):
        raise ValueError(f"relay symbol must have shape ({n},), got {s_relay.shape}")
    y_s = _first_hop(cfg, state, s_src, state.theta_sd, rng)
    rot_r = np.exp(1j * state.theta_rd) * cfo_phasor(state.phi_rd, n)
    y_r = rot_r * filtered_symbol(s_relay, state.g) + _cnoise(cfg.noise_var_dest, n, rng)
    return Observation(y_s=y_s, y_r=y_r)


def synthesize_data_symbol(cfg: SimConfig, state: LinkState, s_comb: np.ndarray,
                           rng: np.random.Generator,
                           theta: Optional[np.ndarray] = None) -> np.ndarray:
    """Comb-type data symbol through the two-hop link.

    ``theta`` defaults to ``state.theta_sd``; pass a fresh Wiener path to model a
    data symbol whose phase noise differs from the training symbol's.
    """
    theta = state.theta_sd if theta is None else theta
    return _first_hop(cfg, state, s_comb, theta, rng)


def combined_channel(alpha: float, theta: np.ndarray, phi: float, c: np.ndarray) -> np.ndarray:
    """N x N matrix ``alpha diag(e^{j theta}) diag(e^{j 2 pi m phi/N}) F^H diag(c_freq)``.

    Column k is the time-domain contribution of subcarrier k.
    """
    n = theta.size
    c_freq = np.fft.fft(c, n)
    fh = np.conj(dft_matrix(n))
    rot = np.exp(1j * theta) * cfo_phasor(phi, n)
    return alpha * rot[:, None] * fh * c_freq[None, :]


def continue_wiener(start: float, skip: int, n: int, sigma2: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Next ``n`` samples of a Wiener path whose last value was ``start``.

    ``skip`` samples (a cyclic prefix, say) elapse before the first returned one.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if sigma2 == 0:
        return np.full(n, float(start))
    steps = rng.normal(0.0, np.sqrt(sigma2), skip + n)
    return start + np.cumsum(steps)[skip:]
