"""Shared fixtures. Acceptance criteria register a one-line verdict that is
printed in the terminal summary, so the lines appear without ``-s``."""
import time

import pytest

_VERDICTS: list[str] = []


class Criterion:
    def __init__(self, number: int, title: str, limit_s: float):
        self.number = number
        self.title = title
        self.limit_s = limit_s
        self.start = time.perf_counter()
        self.details: list[str] = []
        self.checks: list[bool] = []

    def check(self, label: str, ok: bool, value: str = ""):
        self.checks.append(bool(ok))
        self.details.append(f"{label}{'=' + value if value else ''}{'' if ok else ' [FAIL]'}")
        return ok

    def info(self, label: str, value: str):
        self.details.append(f"{label}={value} (info)")

    def finish(self):
        elapsed = time.perf_counter() - self.start
        self.check("runtime", elapsed < self.limit_s, f"{elapsed:.1f}s<{self.limit_s:g}s")
        ok = all(self.checks)
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'} {self.title}: " + "; ".join(self.details)
        _VERDICTS.append(line)
        print(line)
        return ok


@pytest.fixture
def criterion():
    made = []

    def make(number, title, limit_s):
        c = Criterion(number, title, limit_s)
        made.append(c)
        return c

    yield make


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
