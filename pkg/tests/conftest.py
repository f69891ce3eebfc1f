"""Shared fixtures and the per-criterion PASS/FAIL summary for the acceptance suite."""

from __future__ import annotations

import pytest

from cdqkd.channel import ChannelParams

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    entry = _CRITERIA.setdefault(props["criterion"], {"title": props.get("title", ""), "ok": True, "details": []})
    entry["ok"] &= report.passed
    entry["details"].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}  [{detail}]")


@pytest.fixture
def criterion(request, record_property):
    """Tag the running test with its criterion; call the returned function with a measured-value summary."""
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])
    record_property("title", marker.args[1])

    def detail(text: str) -> None:
        record_property("detail", text)

    return detail


@pytest.fixture
def default_channel() -> ChannelParams:
    return ChannelParams(eta=0.70)
