from __future__ import annotations

import numpy as np
import pytest

from afrelay.hcrlb import (
    BoundProblem,
    Layout,
    bim,
    bound_for_state,
    fim_at,
    prior_information,
    transform_and_extract,
    transform_matrix,
)
from afrelay.metrics import fold_cfo_pn
from afrelay.signal_model import SimConfig, cfo_phasor, draw_link_state, filtered_symbol, qpsk_training
from oracles import central_jacobians, fim_dense


def toy_problem(seed: int, snr: float = 10.0, pn: float = 1e-3):
    cfg = SimConfig(n_subcarriers=8, cp_len=4, l_h=2, l_g=2, subspace_dim=4, pilot_count=4,
                    pn_var_sd=pn, pn_var_rd=pn).at_snr(snr)
    rng = np.random.default_rng(seed)
    st = draw_link_state(cfg, rng)
    ss = qpsk_training(cfg, cfg.p_src, rng)
    sr = qpsk_training(cfg, cfg.p_relay, rng)
    prob = BoundProblem.from_state(cfg, st, ss, sr)
    return cfg, st, ss, sr, prob


class TestLayout:
    def test_sizes(self):
        lay = Layout(64, 6, 6)
        assert lay.q == 2 * (64 + 12)
        assert lay.g_block.stop - lay.g_block.start == 11
        assert lay.h_block.stop == lay.q

    def test_pack_roundtrip(self):
        cfg, st, ss, sr, prob = toy_problem(0)
        phi, th, phi_r, th_r, g, h = prob.unpack(prob.pack(st))
        assert phi == st.phi_sd and phi_r == st.phi_rd
        assert np.allclose(g * np.exp(1j * prob.phase_g), st.g)
        assert np.allclose(h * np.exp(1j * prob.phase_h), st.h)

    def test_wrong_length(self):
        _, _, _, _, prob = toy_problem(0)
        with pytest.raises(ValueError):
            prob.unpack(np.zeros(3))


class TestMoments:
    def test_mean_matches_model(self):
        cfg, st, ss, sr, prob = toy_problem(1)
        mu = prob.mean(prob.pack(st))
        ref = st.alpha * np.exp(1j * st.theta_sd) * cfo_phasor(st.phi_sd, 8) * filtered_symbol(ss, st.c)
        assert np.allclose(mu[:8], ref, atol=1e-13)

    @pytest.mark.parametrize("seed", range(10))
    def test_derivatives_against_finite_differences(self, seed):
        _, st, _, _, prob = toy_problem(seed)
        lam = prob.pack(st)
        jac_fd, dcov_fd = central_jacobians(prob, lam)
        jac = prob.mean_derivatives(lam)
        err_mu = np.linalg.norm(jac - jac_fd) / np.linalg.norm(jac)
        dcov = np.zeros_like(dcov_fd)
        dcov[prob.layout.cov_params] = prob.cov_derivatives(lam)
        err_cov = np.linalg.norm(dcov - dcov_fd) / np.linalg.norm(dcov)
        assert err_mu <= 1e-5 and err_cov <= 1e-5

    def test_parameters_outside_cov_list_do_not_move_cov(self):
        _, st, _, _, prob = toy_problem(2)
        lam = prob.pack(st)
        _, dcov_fd = central_jacobians(prob, lam)
        others = np.setdiff1d(np.arange(lam.size), prob.layout.cov_params)
        assert np.max(np.abs(dcov_fd[others])) < 1e-9


class TestFim:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_reference(self, seed):
        _, st, _, _, prob = toy_problem(seed)
        lam = prob.pack(st)
        f = fim_at(prob, lam)
        ref = fim_dense(prob, lam)
        assert np.linalg.norm(f - ref) / np.linalg.norm(ref) < 1e-6

    def test_psd_and_symmetric(self):
        _, st, _, _, prob = toy_problem(3)
        f = fim_at(prob, prob.pack(st))
        assert np.allclose(f, f.T)
        assert np.linalg.eigvalsh(f).min() > -1e-8 * np.abs(f).max()

    def test_cfo_pn_trade_is_null(self):
        """Moving a linear ramp from the PN into the CFO leaves the likelihood flat."""
        _, st, _, _, prob = toy_problem(4)
        lay = prob.layout
        f = fim_at(prob, prob.pack(st))
        n = lay.n
        w = np.zeros(lay.q)
        w[lay.phi_sd] = 1.0
        w[lay.theta_sd] = -2 * np.pi * np.arange(n) / n
        assert w @ f @ w < 1e-8 * np.trace(f)

    def test_prior_block(self):
        cfg = SimConfig(n_subcarriers=8, cp_len=4, l_h=2, l_g=2, subspace_dim=4, pilot_count=4)
        p = prior_information(cfg)
        lay = Layout(8, 2, 2)
        assert np.count_nonzero(p[lay.g_block]) == 0
        assert np.allclose(p[lay.theta_sd, lay.theta_sd][0, :2], [2e4, -1e4])


class TestTransform:
    def test_shape_and_channel_rows(self):
        lay = Layout(8, 2, 2)
        xi = transform_matrix(lay)
        assert xi.shape == (lay.q - 2, lay.q)
        assert np.allclose(xi[16:, lay.g_block.start:], np.eye(lay.q - lay.g_block.start))

    def test_fold_matches_metric(self):
        lay = Layout(8, 2, 2)
        rng = np.random.default_rng(0)
        lam = rng.standard_normal(lay.q)
        d = transform_matrix(lay) @ lam
        assert np.allclose(d[:8], fold_cfo_pn(lam[lay.phi_sd], lam[lay.theta_sd]))
        assert np.allclose(d[8:16], fold_cfo_pn(lam[lay.phi_rd], lam[lay.theta_rd]))

    def test_bound_positive_and_decreasing_in_snr(self):
        vals = []
        for snr in (0.0, 20.0):
            cfg, st, ss, sr, _ = toy_problem(5, snr=snr, pn=1e-4)
            rep = bound_for_state(cfg, st, ss, sr, 2, np.random.default_rng(0))
            assert rep.mse_g > 0 and rep.mse_h > 0 and rep.mse_cfo_pn > 0
            vals.append(rep.mse_g)
        assert vals[1] < vals[0]

    def test_singular_falls_back(self):
        cfg = SimConfig(n_subcarriers=8, cp_len=4, l_h=2, l_g=2, subspace_dim=4, pilot_count=4)
        q = Layout(8, 2, 2).q
        with pytest.warns(RuntimeWarning):
            rep = transform_and_extract(np.zeros((q, q)), cfg)
        assert np.all(np.isfinite(rep.hcrlb_mod))

    def test_bim_requires_draws(self):
        _, st, _, _, prob = toy_problem(0)
        with pytest.raises(ValueError):
            bim(prob, st, 0, np.random.default_rng(0))
