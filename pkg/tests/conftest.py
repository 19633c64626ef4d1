import re

import pytest

_NOTES = {}
_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


@pytest.fixture
def acceptance(request):
    """Record a title and a detail line for the terminal summary."""

    def note(title, detail=""):
        _NOTES[request.node.nodeid] = (title, detail)

    return note


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = _PATTERN.search(getattr(rep, "nodeid", ""))
            if not m or (status != "error" and rep.when != "call"):
                continue
            title, detail = _NOTES.get(rep.nodeid, ("", ""))
            verdict = "PASS" if status == "passed" else "FAIL"
            lines[int(m.group(1))] = f"criterion {int(m.group(1)):2d}: {verdict}  {title}" + (
                f"  [{detail}]" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
