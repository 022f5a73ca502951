"""Prints one summary line per acceptance criterion after the run."""

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for test_name, label in CRITERIA.items():
        outcome = _acceptance.get(test_name)
        if outcome is None:
            continue
        verdict = {"passed": "pass", "failed": "FAIL", "skipped": "skipped"}[outcome]
        terminalreporter.write_line(f"ACCEPTANCE {label}: {verdict}")
