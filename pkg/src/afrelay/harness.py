"""Monte Carlo sweep driver and CSV emission.

Each trial draws a fresh link realization from its own seed, derived from
``(master seed, grid index, trial index)``, so results do not depend on the
order in which grid points or trials are evaluated, nor on ``jobs``.

A detection trial is one frame: a training block followed by
``data_symbols`` comb symbols. Source-to-destination PN keeps evolving
through the cyclic prefixes of the data symbols, starting from where the
training block left off.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .estimator import EstimatorConfig, run_joint_estimation
from .hcrlb import bound_for_state
from .metrics import ber, mse_cfo_pn, mse_channel
from .pn_subspace import basis_for
from .receiver import ChannelKnowledge, CombReceiver, CombSymbol
from .signal_model import (
    SimConfig,
    continue_wiener,
    draw_link_state,
    qpsk_training,
    synthesize_data_symbol,
    synthesize_training,
)

MODES = ("estimate", "detect", "bound", "all")
SEED_ENV = "AFRELAY_SEED"

SCENARIO_COLUMNS = ["snr_db", "pn_var", "m", "mode"]
METRIC_COLUMNS = [
    "mse_g", "mse_g_se", "mse_h", "mse_h_se", "mse_cfopn", "mse_cfopn_se",
    "ber", "ber_se", "hcrlb_g", "hcrlb_h", "hcrlb_cfopn", "iters_mean", "diverged_count",
]
EXTRA_COLUMNS = ["ber_pn_ignorant", "ber_pn_ignorant_se", "ber_genie", "ber_genie_se", "trials"]
COLUMNS = SCENARIO_COLUMNS + METRIC_COLUMNS + EXTRA_COLUMNS


@dataclass
class SweepSpec:
    snr_points: List[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0])
    pn_vars: List[float] = field(default_factory=lambda: [1e-4])
    m_values: List[int] = field(default_factory=lambda: [32])
    n_trials: int = 100
    mode: str = "estimate"
    out: Optional[str] = None
    seed: int = 0
    jobs: int = 1
    bound_n_mc: int = 4
    data_symbols: int = 10
    sim: SimConfig = field(default_factory=SimConfig)
    est: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if not self.snr_points or not self.pn_vars or not self.m_values:
            raise ValueError("sweep lists must be nonempty")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.jobs < 1 or self.bound_n_mc < 1 or self.data_symbols < 1:
            raise ValueError("jobs, bound_n_mc and data_symbols must be >= 1")

    def grid(self) -> List[tuple]:
        return list(itertools.product(self.snr_points, self.pn_vars, self.m_values))

    def scenario(self, snr_db: float, pn_var: float, m: int) -> SimConfig:
        cfg = dataclasses.replace(self.sim, pn_var_sd=pn_var, pn_var_rd=pn_var,
                                  subspace_dim=int(m), pilot_count=max(self.sim.pilot_count, int(m)))
        return cfg.at_snr(snr_db)


def trial_rng(seed: int, grid_idx: int, trial_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, grid_idx, trial_idx]))


def run_trial(spec: SweepSpec, grid_idx: int, trial_idx: int) -> Dict[str, float]:
    """One independent trial; returns raw per-trial quantities."""
    snr_db, pn_var, m = spec.grid()[grid_idx]
    cfg = spec.scenario(snr_db, pn_var, m)
    rng = trial_rng(spec.seed, grid_idx, trial_idx)
    state = draw_link_state(cfg, rng)
    s_s = qpsk_training(cfg, cfg.p_src, rng)
    s_r = qpsk_training(cfg, cfg.p_relay, rng)
    obs = synthesize_training(cfg, state, s_s, s_r, rng)
    out: Dict[str, float] = {}
    mode = spec.mode

    if mode in ("estimate", "detect", "all"):
        basis = basis_for(cfg.n_subcarriers, cfg.pn_var_sd, cfg.subspace_dim)
        basis_rd = basis_for(cfg.n_subcarriers, cfg.pn_var_rd, cfg.subspace_dim)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est = run_joint_estimation(obs.y_s, obs.y_r, s_s, s_r, cfg, spec.est, basis, basis_rd)
        out.update(
            mse_g=mse_channel(est.g, state.g),
            mse_h=mse_channel(est.h, state.h),
            mse_cfopn=mse_cfo_pn(est.phi_sd, est.theta_sd, state.phi_sd, state.theta_sd),
            iters=float(est.iterations),
            diverged=float(est.diverged),
        )

    if mode in ("bound", "all"):
        rep = bound_for_state(cfg, state, s_s, s_r, spec.bound_n_mc, rng)
        out.update(hcrlb_g=rep.mse_g, hcrlb_h=rep.mse_h, hcrlb_cfopn=rep.mse_cfo_pn)

    if mode in ("detect", "all"):
        out.update(_detect_frame(spec, cfg, state, obs, s_s, s_r, est, basis, rng))
    return out


def _detect_frame(spec, cfg, state, obs, s_s, s_r, est, basis, rng) -> Dict[str, float]:
    # PN-ignoring reference: same training data, estimator and detector run with PN switched off
    cfg0 = dataclasses.replace(cfg, pn_var_sd=0.0, pn_var_rd=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est0 = run_joint_estimation(obs.y_s, obs.y_r, s_s, s_r, cfg0, spec.est)
    receivers = {
        "ber": CombReceiver(cfg, ChannelKnowledge(est.phi_sd, est.c, est.g, state.alpha), basis),
        "ber_pn_ignorant": CombReceiver(cfg0, ChannelKnowledge(est0.phi_sd, est0.c, est0.g, state.alpha), None),
        "ber_genie": CombReceiver(cfg, ChannelKnowledge(state.phi_sd, state.c, state.g, state.alpha), None),
    }
    errors = dict.fromkeys(receivers, 0)
    n_bits = 0
    last = state.theta_sd[-1]
    n = cfg.n_subcarriers
    for _ in range(spec.data_symbols):
        comb = CombSymbol.random(cfg, rng)
        theta = continue_wiener(last, cfg.cp_len, n, cfg.pn_var_sd, rng)
        last = theta[-1]
        y = synthesize_data_symbol(cfg, state, comb.values, rng, theta=theta)
        pilots = comb.values[comb.pilot_indices]
        for key, rx in receivers.items():
            res = rx.run_fixed(y, pilots, theta) if key == "ber_genie" else rx.run(y, pilots)
            errors[key] += int(round(ber(res.hard_bits, comb.bits) * comb.bits.size))
        n_bits += comb.bits.size
    return {k: v / n_bits for k, v in errors.items()}


def _mean_se(values: Sequence[float]):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(np.mean(v)), se


def aggregate(spec: SweepSpec, grid_idx: int, trials: List[Dict[str, float]]) -> Dict[str, object]:
    snr_db, pn_var, m = spec.grid()[grid_idx]
    row: Dict[str, object] = {"snr_db": float(snr_db), "pn_var": float(pn_var), "m": int(m), "mode": spec.mode}
    nan = float("nan")

    def col(key):
        return [t[key] for t in trials if key in t]

    for key, name in (("mse_g", "mse_g"), ("mse_h", "mse_h"), ("mse_cfopn", "mse_cfopn"),
                      ("ber", "ber"), ("ber_pn_ignorant", "ber_pn_ignorant"), ("ber_genie", "ber_genie")):
        mean, se = _mean_se(col(key))
        row[name], row[name + "_se"] = mean, se
    for key in ("hcrlb_g", "hcrlb_h", "hcrlb_cfopn"):
        vals = col(key)
        row[key] = float(np.mean(vals)) if vals else nan
    iters = col("iters")
    row["iters_mean"] = float(np.mean(iters)) if iters else nan
    row["diverged_count"] = int(sum(col("diverged")))
    row["trials"] = len(trials)
    return row


def _task(args):
    spec, g, t = args
    return run_trial(spec, g, t)


def run_sweep(spec: SweepSpec) -> List[Dict[str, object]]:
    """Run every trial of every grid point and aggregate, in grid order."""
    grid = spec.grid()
    tasks = [(spec, g, t) for g in range(len(grid)) for t in range(spec.n_trials)]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * spec.jobs))))
    else:
        results = [_task(t) for t in tasks]
    rows = []
    for g in range(len(grid)):
        rows.append(aggregate(spec, g, results[g * spec.n_trials:(g + 1) * spec.n_trials]))
    return rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(rows: Iterable[Dict[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c, float("nan"))) for c in COLUMNS])
    return buf.getvalue()


def emit_csv(rows: Iterable[Dict[str, object]], path: str) -> None:
    text = format_csv(rows)
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# configuration


def _tuple_cfo(v):
    return tuple(v) if isinstance(v, (list, tuple)) else v


def spec_from_dict(data: dict) -> SweepSpec:
    """Build a spec from a parsed config with optional ``sim``, ``estimator`` and ``sweep`` tables."""
    unknown = set(data) - {"sim", "estimator", "sweep"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sim_kw = dict(data.get("sim", {}))
    for k in ("cfo_sd", "cfo_rd"):
        if k in sim_kw:
            sim_kw[k] = _tuple_cfo(sim_kw[k])
    sweep = dict(data.get("sweep", {}))
    rename = {"snr_db": "snr_points", "pn_var": "pn_vars", "m": "m_values", "trials": "n_trials"}
    sweep = {rename.get(k, k): v for k, v in sweep.items()}
    return SweepSpec(sim=SimConfig(**sim_kw), est=EstimatorConfig(**data.get("estimator", {})), **sweep)


def load_config(path: str) -> SweepSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def apply_overrides(spec: SweepSpec, args, environ=None) -> SweepSpec:
    """Apply CLI flags (and the seed environment variable) on top of ``spec``."""
    environ = os.environ if environ is None else environ
    upd = {}
    if environ.get(SEED_ENV):
        upd["seed"] = int(environ[SEED_ENV])
    mapping = {"snr": "snr_points", "pn_var": "pn_vars", "m": "m_values", "trials": "n_trials",
               "seed": "seed", "mode": "mode", "out": "out", "jobs": "jobs",
               "bound_mc": "bound_n_mc", "data_symbols": "data_symbols"}
    for arg, attr in mapping.items():
        val = getattr(args, arg, None)
        if val is not None:
            upd[attr] = list(val) if isinstance(val, (list, tuple)) else val
    sim_upd = {}
    if getattr(args, "cfo_sd", None) is not None:
        sim_upd["cfo_sd"] = float(args.cfo_sd)
    if getattr(args, "cfo_rd", None) is not None:
        sim_upd["cfo_rd"] = float(args.cfo_rd)
    if sim_upd:
        upd["sim"] = dataclasses.replace(spec.sim, **sim_upd)
    return dataclasses.replace(spec, **upd)
