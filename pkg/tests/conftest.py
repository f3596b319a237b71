from __future__ import annotations

import os
import sys
from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

settings.register_profile("default", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def demo_script_path():
    return resources.files("mechforge").joinpath("data/demo_script.json")


@pytest.fixture
def demo_script():
    return str(demo_script_path())


@pytest.fixture
def demo_html():
    return resources.files("mechforge").joinpath("data/demo_game.html").read_text(encoding="utf-8")


# --- acceptance reporting -----------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed:
            detail = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr).splitlines()[0]
        elif rep.skipped:
            detail = "skipped: " + str(rep.longrepr[-1] if isinstance(rep.longrepr, tuple) else rep.longrepr)
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}" + (f" ({detail})" if detail else ""))
