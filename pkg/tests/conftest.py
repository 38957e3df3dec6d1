"""Shared fixtures; acceptance results are echoed in the terminal summary."""
from __future__ import annotations

import pytest
import torch

_ACCEPTANCE: dict[int, str] = {}


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture
def report():
    """Record one acceptance line: ``report(k, name, passed, detail)``."""
    def record(k: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"ACCEPTANCE {k} [{'PASS' if passed else 'FAIL'}] {name}"
        _ACCEPTANCE[k] = line + (f": {detail}" if detail else "")
        print(_ACCEPTANCE[k])
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
