from __future__ import annotations

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from afrelay.signal_model import SimConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_cfg():
    """N=8 link with two taps per hop, small enough for brute-force checks."""
    return SimConfig(n_subcarriers=8, cp_len=4, l_h=2, l_g=2, subspace_dim=4, pilot_count=4,
                     pn_var_sd=1e-4, pn_var_rd=1e-4)


_ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def _record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
