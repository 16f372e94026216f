from __future__ import annotations

import numpy as np
import pytest

from afrelay.estimator import EstimatorConfig, JointEstimator, run_joint_estimation
from afrelay.metrics import mse_cfo_pn, mse_channel
from afrelay.signal_model import SimConfig, draw_link_state, qpsk_training, synthesize_training
from oracles import nllf_direct


def training(cfg, seed):
    rng = np.random.default_rng(seed)
    st = draw_link_state(cfg, rng)
    ss = qpsk_training(cfg, cfg.p_src, rng)
    sr = qpsk_training(cfg, cfg.p_relay, rng)
    ob = synthesize_training(cfg, st, ss, sr, rng)
    return st, ss, sr, ob


@pytest.fixture(scope="module")
def high_snr_run():
    cfg = SimConfig().at_snr(30)
    st, ss, sr, ob = training(cfg, 7)
    est = JointEstimator(cfg, ob.y_s, ob.y_r, ss, sr)
    return cfg, st, est, est.run()


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EstimatorConfig(max_iters=-1)
        with pytest.raises(ValueError):
            EstimatorConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            EstimatorConfig(cfo_step=0.0)

    def test_input_shapes(self):
        cfg = SimConfig()
        with pytest.raises(ValueError):
            JointEstimator(cfg, np.zeros(10), np.zeros(64), np.ones(64), np.ones(64))


class TestRelayHop:
    def test_objective_matches_direct_form(self):
        """The Woodbury form used in code equals the textbook inverse when Psi is invertible."""
        cfg = SimConfig(pn_var_rd=1e-3).at_snr(20)
        _, ss, sr, ob = training(cfg, 1)
        est = JointEstimator(cfg, ob.y_s, ob.y_r, ss, sr)
        aa = est._relay_terms()
        c = est.var_d * est.p_relay / 2
        psi_inv = np.linalg.inv(est.psi_rd)
        for phi in (-0.3, 0.0, 0.21):
            bd = est._relay_b(aa, phi)
            b = bd.imag.sum(axis=1)
            ref = bd.sum().real - b @ np.linalg.solve(bd.real + c * psi_inv, b)
            got = est.relay_cfo_objective(np.array([phi]), aa)[0]
            assert got == pytest.approx(ref, rel=1e-8)

    def test_cfo_and_pn_recovered(self):
        # the CFO alone is not identifiable against a PN ramp; compare the folded phase path
        cfg = SimConfig().at_snr(30)
        errs = []
        for seed in range(5):
            st, ss, sr, ob = training(cfg, seed)
            est = JointEstimator(cfg, ob.y_s, ob.y_r, ss, sr)
            phi = est.estimate_rd_cfo()
            errs.append(mse_cfo_pn(phi, est.estimate_rd_pn(phi), st.phi_rd, st.theta_rd) / cfg.n_subcarriers)
        assert np.median(errs) < 1e-2


class TestCoordinateUpdates:
    def test_h_update_is_conditional_minimizer(self, high_snr_run):
        _, _, est, out = high_snr_run
        st = est.init_estimates(out.phi_rd, out.theta_rd)
        est.update_h(st)
        base = est.negative_llf(st)
        rng = np.random.default_rng(0)
        for _ in range(5):
            d = 1e-3 * (rng.standard_normal(st.h_hat.size) + 1j * rng.standard_normal(st.h_hat.size))
            e = est.nllf_params(st.phi_sd, st.eta_sd, st.h_hat + d, st.g_hat, st.theta_rd, st.phi_rd)
            assert e >= base - 1e-9

    def test_sigma_refreshed(self, high_snr_run):
        _, _, est, out = high_snr_run
        st = est.init_estimates(out.phi_rd, out.theta_rd)
        for step in (est.update_pn, est.update_g, est.update_cfo):
            step(st)
            assert np.allclose(st.sigma_r, est.sigma_r(st.g_hat, st.theta_sd, st.phi_sd))


class TestRun:
    def test_trace_matches_independent_objective(self, high_snr_run):
        _, _, est, out = high_snr_run
        ref = nllf_direct(est, out.phi_sd, out.eta_sd, out.h, out.g, out.theta_rd, out.phi_rd)
        assert ref == pytest.approx(out.nllf_trace[-1], abs=1e-8)

    def test_objective_descends(self, high_snr_run):
        _, _, _, out = high_snr_run
        assert out.nllf_trace[-1] < out.nllf_trace[0]

    def test_accuracy_at_high_snr(self, high_snr_run):
        _, st, _, out = high_snr_run
        assert mse_channel(out.g, st.g) < 0.05
        assert mse_channel(out.h, st.h) < 0.1
        assert mse_cfo_pn(out.phi_sd, out.theta_sd, st.phi_sd, st.theta_sd) < 0.5

    def test_zero_iterations(self):
        cfg = SimConfig().at_snr(20)
        _, ss, sr, ob = training(cfg, 3)
        out = run_joint_estimation(ob.y_s, ob.y_r, ss, sr, cfg, EstimatorConfig(max_iters=0))
        assert out.iterations == 0 and len(out.nllf_trace) == 1

    def test_fixed_cfo_without_pn(self):
        cfg = SimConfig(pn_var_sd=0.0, pn_var_rd=0.0, cfo_sd=0.1, cfo_rd=-0.2).at_snr(30)
        st, ss, sr, ob = training(cfg, 4)
        out = run_joint_estimation(ob.y_s, ob.y_r, ss, sr, cfg)
        assert abs(out.phi_sd - 0.1) < 5e-3 and abs(out.phi_rd + 0.2) < 5e-3
        assert np.all(out.theta_sd == 0)

    def test_deterministic(self):
        cfg = SimConfig().at_snr(10)
        _, ss, sr, ob = training(cfg, 5)
        a = run_joint_estimation(ob.y_s, ob.y_r, ss, sr, cfg)
        b = run_joint_estimation(ob.y_s, ob.y_r, ss, sr, cfg)
        assert np.array_equal(a.g, b.g) and a.phi_sd == b.phi_sd
