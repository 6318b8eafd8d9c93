import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log(request):
    """Collects one line per acceptance criterion for the terminal summary."""
    config = request.config
    if not hasattr(config, "_acceptance_lines"):
        config._acceptance_lines = []

    def log(criterion: str, ok: bool, detail: str):
        config._acceptance_lines.append(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
