import pytest
from hypothesis import HealthCheck, settings

from o2osim.config import RunConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_config(**overrides) -> RunConfig:
    """A 20-rider, two-day world that runs in well under a second."""
    base = {"world.n_riders": 20, "world.horizon": 240}
    base.update(overrides)
    return RunConfig().replace(**base)


@pytest.fixture
def small():
    return small_config()


_DEFAULT_TRACES: dict = {}


@pytest.fixture(scope="session")
def default_traces():
    """Lazily computed full-size default runs, shared across tests."""
    from o2osim.engine import run

    def get(seed: int):
        if seed not in _DEFAULT_TRACES:
            _DEFAULT_TRACES[seed] = run(RunConfig(), seed)
        return _DEFAULT_TRACES[seed]

    return get


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
