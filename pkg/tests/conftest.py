from pathlib import Path

import numpy as np
import pytest

from tapopf.case_model import load_case, to_internal

DATA = Path(__file__).parent / "data"

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  ({detail})")


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def case2():
    return to_internal(load_case(DATA / "case2.json"))


@pytest.fixture
def case9():
    return to_internal(load_case(DATA / "case9.mpc"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
