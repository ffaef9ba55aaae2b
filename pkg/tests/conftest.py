import pytest

CRITERIA = {
    1: "level graph rules agree with the brute-force oracle",
    2: "F_Ag2 cardinalities and bookkeeping",
    3: "disaggregation round trip and translation equivariance",
    4: "mean-position subfunction against an exact oracle",
    5: "multi-rate scheduling and frequency demands",
    6: "selection strategies against exhaustive search",
    7: "weak consistency of the platoon experiment",
    8: "byte-identical outputs for repeated runs",
}

_results: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results.setdefault(marker.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        outcomes = _results.get(n)
        if outcomes is None:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict:7} {title} ({len(outcomes or [])} tests)")
