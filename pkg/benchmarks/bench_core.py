"""Wall-clock timings of the hot paths, one trial-sized call each.

Run with ``python3 benchmarks/bench_core.py [--repeat 5] [--snr 30]``.
"""

from __future__ import annotations

import argparse
import statistics
import time
import warnings

import numpy as np

from afrelay.estimator import JointEstimator
from afrelay.hcrlb import BoundProblem, fim_at
from afrelay.pn_subspace import basis_for
from afrelay.receiver import ChannelKnowledge, CombReceiver, CombSymbol
from afrelay.signal_model import (
    SimConfig,
    draw_link_state,
    qpsk_training,
    synthesize_data_symbol,
    synthesize_training,
)


def _time(fn, repeat: int) -> float:
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--snr", type=float, default=30.0)
    args = ap.parse_args(argv)

    cfg = SimConfig().at_snr(args.snr)
    rng = np.random.default_rng(0)
    st = draw_link_state(cfg, rng)
    ss = qpsk_training(cfg, cfg.p_src, rng)
    sr = qpsk_training(cfg, cfg.p_relay, rng)
    ob = synthesize_training(cfg, st, ss, sr, rng)
    est = JointEstimator(cfg, ob.y_s, ob.y_r, ss, sr)
    basis = basis_for(cfg.n_subcarriers, cfg.pn_var_sd, cfg.subspace_dim)
    prob = BoundProblem.from_state(cfg, st, ss, sr)
    lam = prob.pack(st)
    rx = CombReceiver(cfg, ChannelKnowledge(st.phi_sd, st.c, st.g, st.alpha), basis)
    comb = CombSymbol.random(cfg, rng)
    y = synthesize_data_symbol(cfg, st, comb.values, rng)
    pil = comb.values[comb.pilot_indices]

    def full_run():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            JointEstimator(cfg, ob.y_s, ob.y_r, ss, sr).run()

    rows = [
        ("relay CFO grid search", lambda: est.estimate_rd_cfo()),
        ("one estimator sweep", lambda: est.sweep(est.init_estimates(st.phi_rd, st.theta_rd))),
        ("full joint estimation", full_run),
        ("FIM at one PN draw", lambda: fim_at(prob, lam)),
        ("comb-symbol detection", lambda: rx.run(y, pil)),
    ]
    print(f"N={cfg.n_subcarriers}, SNR {args.snr:g} dB, median of {args.repeat}")
    for name, fn in rows:
        print(f"  {name:<24s} {1e3 * _time(fn, args.repeat):9.2f} ms")


if __name__ == "__main__":
    main()
