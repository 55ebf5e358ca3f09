"""Prints one pass/fail line per acceptance criterion at the end of the run.

Acceptance tests are named ``test_c<N>_...``; a criterion passes when every
test carrying its number passes.  Tests may attach a ``detail`` property.
"""
import re
from collections import OrderedDict

_PATTERN = re.compile(r"test_acceptance\.py::(?:\w+::)?test_c(\d+)[a-z]?_(\w+)")
_results: "OrderedDict[int, dict]" = OrderedDict()


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    if report.when != "call" and not report.failed and not report.skipped:
        return
    entry = _results.setdefault(int(m.group(1)), {"ok": True, "ran": False, "details": []})
    entry["ran"] = True
    if report.failed or report.skipped:
        entry["ok"] = False
        entry["details"].append(f"{m.group(2)}: {'failed' if report.failed else 'skipped'}")
    for key, value in report.user_properties:
        if key == "detail":
            entry["details"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number}: {status}" + (f"  ({detail})" if detail else ""))
