import contextlib
import time

import numpy as np
import pytest
from hypothesis import settings

from e1d3 import kernels

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    log = request.config.stash[_ACCEPTANCE]

    @contextlib.contextmanager
    def record(number, title):
        notes = {}
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            detail = notes.get("detail", "")
            line = f"{status} [{number}] {title}" + (f": {detail}" if detail else "")
            line += f" ({time.perf_counter() - t0:.1f} s)"
            print(line)
            log.append((number, line))

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param
