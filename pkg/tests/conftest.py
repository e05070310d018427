import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def emit(tag, ok, detail):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return emit
