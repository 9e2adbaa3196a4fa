from __future__ import annotations

import threading

import pytest

from clinforge.mock_endpoint import MockChat, make_server

_acceptance: list[tuple[str, str, float]] = []


@pytest.fixture
def mock_chat():
    return MockChat()


@pytest.fixture
def mock_server(mock_chat):
    server = make_server(mock_chat)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{server.server_port}/v1", mock_chat
    server.shutdown()
    server.server_close()


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    doc = getattr(report, "ac_title", None) or report.nodeid.split("::")[-1]
    _acceptance.append((doc, report.outcome.upper(), report.duration))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    fn = getattr(item, "function", None)
    if fn is not None and fn.__doc__:
        rep.ac_title = fn.__doc__.strip().splitlines()[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for title, outcome, dur in _acceptance:
        mark = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {title}  ({dur:.2f}s)")
