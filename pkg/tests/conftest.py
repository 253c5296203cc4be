import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualfd import generators, subdivision  # noqa: E402

ACCEPTANCE: list = []


def record(criterion: int, ok: bool, detail: str) -> None:
    """Register one acceptance line; printed in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {detail}"
    ACCEPTANCE.append((criterion, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(line)


@lru_cache(maxsize=None)
def base_mesh(kind: str):
    return generators.generate_test_mesh(kind)


@lru_cache(maxsize=None)
def refined(kind: str, n: int):
    if n == 0:
        return base_mesh(kind)
    return subdivision.refine_n(refined(kind, n - 1), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
