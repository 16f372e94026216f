from __future__ import annotations

import argparse
import json
import math

import pytest

from afrelay import harness
from afrelay.__main__ import build_parser, main
from afrelay.harness import COLUMNS, SweepSpec


def tiny(mode="estimate", **kw):
    return SweepSpec(snr_points=[20.0], pn_vars=[1e-4], m_values=[8], n_trials=2, mode=mode,
                     data_symbols=1, bound_n_mc=1, seed=3, **kw)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SweepSpec(snr_points=[])
        with pytest.raises(ValueError):
            SweepSpec(mode="nope")
        with pytest.raises(ValueError):
            SweepSpec(n_trials=0)

    def test_grid_order(self):
        s = SweepSpec(snr_points=[0, 10], pn_vars=[1e-4, 1e-3], m_values=[8])
        assert s.grid() == [(0, 1e-4, 8), (0, 1e-3, 8), (10, 1e-4, 8), (10, 1e-3, 8)]

    def test_scenario_powers(self):
        cfg = SweepSpec().scenario(20.0, 1e-3, 16)
        assert cfg.p_src == pytest.approx(100.0) and cfg.pn_var_rd == 1e-3 and cfg.subspace_dim == 16


class TestTrials:
    def test_seed_independence_of_order(self):
        spec = tiny()
        a = harness.run_trial(spec, 0, 1)
        harness.run_trial(spec, 0, 0)
        b = harness.run_trial(spec, 0, 1)
        assert a == b

    def test_all_mode_columns(self):
        rows = harness.run_sweep(tiny("all"))
        row = rows[0]
        for key in ("mse_g", "hcrlb_g", "ber", "ber_genie", "iters_mean"):
            assert math.isfinite(row[key])
        assert row["trials"] == 2

    def test_bound_mode_leaves_estimates_blank(self):
        row = harness.run_sweep(tiny("bound"))[0]
        assert math.isnan(row["mse_g"]) and row["hcrlb_g"] > 0


class TestCsv:
    def test_header_only_for_empty(self):
        assert harness.format_csv([]) == ",".join(COLUMNS) + "\n"

    def test_roundtrip(self, tmp_path):
        rows = harness.run_sweep(tiny())
        path = tmp_path / "out.csv"
        harness.emit_csv(rows, str(path))
        back = harness.read_csv(str(path))
        assert len(back) == 1
        assert float(back[0]["mse_g"]) == rows[0]["mse_g"]

    def test_bad_path(self, tmp_path):
        with pytest.raises(OSError):
            harness.emit_csv([], str(tmp_path / "missing" / "x.csv"))


class TestConfig:
    def test_json_and_overrides(self, tmp_path):
        cfg = {"sim": {"n_subcarriers": 32, "pilot_count": 16, "subspace_dim": 8},
               "estimator": {"max_iters": 5}, "sweep": {"snr_db": [5], "trials": 3}}
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        spec = harness.load_config(str(p))
        assert spec.sim.n_subcarriers == 32 and spec.est.max_iters == 5 and spec.n_trials == 3
        args = build_parser().parse_args(["--trials", "7", "--seed", "9"])
        spec2 = harness.apply_overrides(spec, args, environ={harness.SEED_ENV: "4"})
        assert spec2.n_trials == 7 and spec2.seed == 9

    def test_env_seed(self):
        args = argparse.Namespace()
        assert harness.apply_overrides(SweepSpec(), args, environ={harness.SEED_ENV: "11"}).seed == 11

    def test_unknown_section(self):
        with pytest.raises(ValueError):
            harness.spec_from_dict({"bogus": {}})


class TestCli:
    def test_writes_file(self, tmp_path):
        out = tmp_path / "r.csv"
        rc = main(["--snr", "20", "--m", "8", "--trials", "1", "--seed", "1", "--out", str(out)])
        assert rc == 0 and out.read_text().startswith("snr_db,")

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert main(["--config", str(tmp_path / "nope.json")]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_stdout(self, capsys):
        assert main(["--snr", "20", "--m", "8", "--trials", "1", "--mode", "bound", "--bound-mc", "1"]) == 0
        assert capsys.readouterr().out.count("\n") == 2
