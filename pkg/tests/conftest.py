import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


@pytest.fixture(scope="session")
def runs():
    """Memoized ``experiments.run`` shared by every test in the session (end-to-end runs are slow)."""
    from slotvio import experiments

    cache = {}

    def run(kind, seed, method, zero_noise=False, **overrides):
        key = (kind, seed, method, zero_noise, tuple(sorted(overrides.items())))
        if key not in cache:
            cache[key] = experiments.run(kind, seed, method, zero_noise=zero_noise, **overrides)
        return cache[key]

    return run


# acceptance criteria report: one line per criterion in the terminal summary
_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    def record(number, title, ok, detail):
        _CRITERIA[number] = (bool(ok), title, detail)
        assert ok, f"criterion {number} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
