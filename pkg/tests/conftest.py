from pathlib import Path

import numpy as np
import pytest

from marketstates.correlation import EpochCorrelation, pearson_correlation

DATA = Path(__file__).parent / "data"

_acceptance: list[tuple[str, str]] = []


def random_correlation(n, rng, length=None):
    """Sample correlation of n random series; rank deficient when length < n."""
    length = length or n + 5
    mix = rng.standard_normal((n, n)) * rng.uniform(0.2, 1.0)
    return pearson_correlation(mix @ rng.standard_normal((n, length)) + rng.standard_normal((n, length)))


def random_frames(m, n, seed=0, epsilon=0.0):
    rng = np.random.default_rng(seed)
    return [EpochCorrelation(i, epsilon, random_correlation(n, rng, 20)) for i in range(m)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): exit criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _acceptance.append((status, marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _acceptance:
        terminalreporter.write_line(f"[{status}] {name}")
