from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from mcfem.mesh import build_icosphere

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@lru_cache(maxsize=None)
def _sphere(level, degree, radius=1.0):
    mesh, x = build_icosphere(level, degree, radius)
    x.setflags(write=False)
    return mesh, x


@pytest.fixture(scope="session")
def sphere():
    """``sphere(level, degree, radius=1.0)`` -> cached (mesh, x0); x0 is read-only."""
    return _sphere


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Shared list of ``(number, title, passed, detail)`` for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(lines):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] A{number} {title}: {detail}")
