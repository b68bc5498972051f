import os

import pytest
from hypothesis import settings

from shadow_merton.fbvp import shoot
from shadow_merton.market import MarketParams
from shadow_merton.shadow import ShadowCoefficients

settings.register_profile("default", max_examples=25, deadline=None)
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

REFERENCE = MarketParams(mu=0.08, sigma=0.3, delta=0.1, lambda_buy=0.01, lambda_sell=0.01)


@pytest.fixture(scope="session")
def ref_params():
    return REFERENCE


@pytest.fixture(scope="session")
def ref_sol():
    return shoot(REFERENCE, tol=1e-10)


@pytest.fixture(scope="session")
def ref_coeffs(ref_sol):
    return ShadowCoefficients.from_solution(ref_sol)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log(capsys):
    """Print one result line immediately and keep it for the end-of-run summary."""

    def log(label, ok, detail, seconds=None, info=False):
        status = "INFO" if info else ("PASS" if ok else "FAIL")
        line = f"{label}: {status} | {detail}"
        if seconds is not None:
            line += f" | {seconds:.1f} s"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
