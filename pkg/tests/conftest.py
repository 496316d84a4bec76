from __future__ import annotations

from pathlib import Path

import pytest

from scmtransmit.fixtures import write_bundled_fixture


@pytest.fixture
def fixture_dir(tmp_path) -> Path:
    """A writable copy of the bundled fixture (panel, macro, config)."""
    d = tmp_path / "fx"
    write_bundled_fixture(d, seed=7)
    return d



# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA[item.nodeid] = (number, title)


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    number, title = _CRITERIA[report.nodeid]
    rec = _OUTCOMES.setdefault(number, {"title": title, "status": "PASS", "details": [], "seen": False})
    if report.when == "call" or report.skipped or report.failed:
        rec["seen"] = True
        if report.failed:
            rec["status"] = "FAIL"
        elif report.skipped and rec["status"] == "PASS":
            rec["status"] = "SKIP"
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            rec["details"].append(reason)
    for key, value in report.user_properties:
        if key == "detail" and value not in rec["details"]:
            rec["details"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        rec = _OUTCOMES[number]
        if not rec["seen"]:
            continue
        tr.write_line(f"criterion {number:>2}: {rec['status']}  {rec['title']}")
        for d in rec["details"]:
            tr.write_line(f"    {d}")
