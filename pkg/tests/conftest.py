"""Shared test configuration and the acceptance summary hook.

Acceptance tests register one line per criterion through
:func:`record_criterion`; the terminal summary prints them so a full
run ends with an explicit PASS/FAIL roll call.
"""

from __future__ import annotations

_ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def record_criterion(number: int, description: str, passed: bool) -> None:
    prev = _ACCEPTANCE.get(number)
    if prev is not None:
        passed = passed and prev[1]
    _ACCEPTANCE[number] = (description, passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        description, passed = _ACCEPTANCE[number]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {word}  {description}")
