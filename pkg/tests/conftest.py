"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line each at the end of the run."""

import pytest

_VERDICTS: dict[str, tuple[str, str]] = {}
_ORDER: list[str] = []


def _criterion(item) -> str | None:
    marker = item.get_closest_marker("criterion")
    return str(marker.args[0]) if marker else None


def _detail(report) -> str:
    for key, value in report.user_properties:
        if key == "detail":
            return value
    return ""


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    crit = _criterion(item)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        verdict = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        if crit not in _VERDICTS:
            _ORDER.append(crit)
        text = _detail(report)
        if report.skipped and isinstance(report.longrepr, tuple):
            text = report.longrepr[2].removeprefix("Skipped: ")
        _VERDICTS[crit] = (verdict, text)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in _ORDER:
        verdict, detail = _VERDICTS[crit]
        terminalreporter.write_line(f"criterion {crit:<3} {verdict}  {detail}".rstrip())
