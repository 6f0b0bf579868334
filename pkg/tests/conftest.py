import re

import pytest

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[str, str] = {}


def _order(label: str):
    m = re.match(r"(\d+)(.*)", label)
    return int(m.group(1)), m.group(2)


@pytest.fixture
def record():
    def _record(number, ok: bool, detail: str) -> None:
        label = str(number)
        line = f"criterion {label:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[label] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA, key=_order):
            terminalreporter.write_line(CRITERIA[k])
