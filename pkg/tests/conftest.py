from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from hjsing.action import minimizer_log

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# Every minimizer computed during the session is audited by the last
# acceptance test against the a-priori velocity bound.
_CONTEXT = None
ACCEPTANCE_LINES: dict[int, str] = {}
TIMINGS: dict[str, float] = {}


def pytest_configure(config):
    global _CONTEXT
    _CONTEXT = minimizer_log()
    log = _CONTEXT.__enter__()
    config._hjsing_log = log


def pytest_unconfigure(config):
    if _CONTEXT is not None:
        _CONTEXT.__exit__(None, None, None)


def pytest_collection_modifyitems(session, config, items):
    last = [it for it in items if it.name.startswith("test_criterion_15")]
    rest = [it for it in items if not it.name.startswith("test_criterion_15")]
    items[:] = rest + last


@pytest.fixture
def session_minimizer_log(request):
    return request.config._hjsing_log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def pendulum_kam_512():
    import time

    from hjsing.models import get_model
    from hjsing.weak_kam import weak_kam_solve

    start = time.perf_counter()
    res = weak_kam_solve(get_model("pendulum"), 512)
    TIMINGS["pendulum_kam_512"] = time.perf_counter() - start
    return res
