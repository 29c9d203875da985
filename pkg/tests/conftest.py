"""Collect the acceptance-criterion outcomes and print one PASS/FAIL line per criterion."""
import re

import pytest

_DETAILS = {}
_OUTCOMES = {}


def note(criterion: int, text: str) -> None:
    """Attach a one-line measurement to ``criterion`` (shown next to its verdict)."""
    _DETAILS[criterion] = text
    print(f"criterion {criterion}: {text}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m and (rep.when == "call" or rep.failed):
        k = int(m.group(1))
        _OUTCOMES[k] = _OUTCOMES.get(k, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_OUTCOMES):
        verdict = "PASS" if _OUTCOMES[k] else "FAIL"
        terminalreporter.write_line(f"{verdict}  criterion {k}: {_DETAILS.get(k, '')}")
