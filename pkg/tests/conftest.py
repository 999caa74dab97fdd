"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

_ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record(criterion: int, title: str, passed: bool, detail: str = "") -> None:
    """Store and print one pass/fail line for an acceptance criterion."""
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} {title}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE.append((criterion, title, passed, line))
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS
