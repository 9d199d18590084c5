import numpy as np
import pytest

from robust_erm.smooth_loss import build_smoothed_huber


@pytest.fixture(scope="session")
def exact_loss():
    return build_smoothed_huber()


@pytest.fixture(scope="session")
def table_loss():
    return build_smoothed_huber(tabulate=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict = {}  # criterion number -> (passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            ok, detail = ACCEPTANCE[num]
            terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
