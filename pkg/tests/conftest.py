import pytest
from hypothesis import HealthCheck, settings

import _accept
from devmf.optim import warm_up

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile (or load from cache) the numba kernels once per session so
    per-test timings stay honest."""
    warm_up()


def pytest_terminal_summary(terminalreporter):
    if _accept.lines:
        terminalreporter.section("acceptance criteria")
        for line in _accept.lines:
            terminalreporter.write_line(line)
