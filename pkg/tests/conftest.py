from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

from bnbsim.cards import default_catalog

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""

    @contextmanager
    def check(number: int, title: str, limit: float | None = None):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            budget = f" (limit {limit:g}s)" if limit is not None else ""
            _CRITERIA.append(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}  [{elapsed:.2f}s{budget}]")
        if limit is not None:
            assert elapsed < limit, f"criterion {number} took {elapsed:.2f}s, limit {limit}s"

    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
