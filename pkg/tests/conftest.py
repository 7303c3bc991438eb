from collections import defaultdict
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

# criterion number -> (title, [outcomes])
_CRITERIA: dict[int, list] = defaultdict(lambda: ["", []])


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            item.user_properties.append(("criterion", (m.args[0], m.args[1])))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, title = crit
    entry = _CRITERIA[n]
    entry[0] = title
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry[1].append("skipped" if report.skipped else ("passed" if report.passed else "failed"))
    elif report.when == "teardown" and report.failed:
        entry[1].append("failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[n]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        passed = outcomes.count("passed")
        tr.write_line(f"criterion {n:>2}: {verdict}  {title}  ({passed}/{len(outcomes)} tests passed)")


@pytest.fixture
def fixture_dataset():
    return FIXTURES / "tiny_dataset.jsonl"


@pytest.fixture
def small_dataset():
    return FIXTURES / "three_dataset.jsonl"

