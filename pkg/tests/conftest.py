"""Collects the acceptance verdict lines and prints them after the test report."""

import pytest

_LINES: list[str] = []


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok: bool) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def line(self) -> str:
        detail = "; ".join(f"{lbl} [{'ok' if ok else 'FAIL'}]" for lbl, ok in self.checks)
        return f"criterion {self.number:2d} {'PASS' if self.ok else 'FAIL'}  {self.title}: {detail}"


@pytest.fixture
def criterion(request):
    """``criterion(n, title)`` returns a recorder whose line is printed at the end."""
    made = []

    def make(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        _LINES.append(c.line())
        print(c.line())


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
