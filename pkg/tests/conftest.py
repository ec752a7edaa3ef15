import time
from contextlib import contextmanager

import pytest

_RESULTS: list[tuple[str, bool, float, float]] = []


@pytest.fixture
def criterion():
    """Times one acceptance criterion and records a pass/fail line for the summary."""

    @contextmanager
    def run(name: str, limit: float):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = elapsed < limit
            _RESULTS.append((name, ok and within, elapsed, limit))
        assert within, f"{name}: took {elapsed:.2f}s, limit {limit}s"

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, elapsed, limit in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({elapsed:.2f}s, limit {limit:g}s)")
