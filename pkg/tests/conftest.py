import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sicnode.pulses import Register  # noqa: E402
from sicnode.spincore import SpinRegisterParams  # noqa: E402

D_GS = 1365.0


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs")


@pytest.fixture
def params():
    return SpinRegisterParams(d_gs=D_GS)


@pytest.fixture
def reg(params):
    return Register.from_params(params)


@pytest.fixture
def reg330():
    return Register.from_params(SpinRegisterParams(d_gs=D_GS, b_field=[0.0, 0.0, 330.0]))


def base_config(**overrides):
    cfg = {"register": {"d_gs_mhz": D_GS}, "seed": 11}
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    return cfg


def phase_gauged_distance(u, v):
    """max |u - e^{i a} v| over the best global phase a."""
    a = np.angle(np.trace(v.conj().T @ u))
    return float(np.max(np.abs(u - np.exp(1j * a) * v)))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def add(criterion, passed, detail):
        lines.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
