import numpy as np
import pytest

from thermsched.platform import load_platform_config
from thermsched.workload import load_app_library


@pytest.fixture(scope="session")
def config():
    return load_platform_config()


@pytest.fixture(scope="session")
def library():
    return load_app_library()


@pytest.fixture(autouse=True)
def _strict_numerics():
    # the CLI runs with floating-point errors raised; tests should match
    old = np.seterr(all="raise", under="ignore")
    yield
    np.seterr(**old)


def pytest_configure(config):
    config._criteria_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
