from collections import defaultdict

_results: dict[int, dict] = defaultdict(lambda: {"title": "", "outcomes": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    entry = _results[number]
    entry["title"] = title
    entry["outcomes"].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if all(entry["outcomes"]) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {number}: {entry['title']}")
