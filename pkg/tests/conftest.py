import pathlib

import pytest

from bmvd.geometry import ModelParams

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# filled by test_acceptance, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def params():
    return ModelParams(0.25, 1.0)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {k}: {detail}")
