"""Shared fixtures: canonical plugin documents, async helpers, acceptance
reporting (one pass/fail line per criterion at the end of the run)."""

from __future__ import annotations

import asyncio
import functools

import pytest

_acceptance_results: list[tuple[str, bool]] = []


def criterion(description: str):
    """Mark an acceptance test with the criterion it implements."""

    def mark(fn):
        fn.acceptance_criterion = description
        return fn

    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    description = getattr(item.function, "acceptance_criterion", None)
    if description is not None:
        _acceptance_results.append((description, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for description, ok in _acceptance_results:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {description}")

CALCULATOR_SOURCE = """\
<config lang="json">
{
  "name": "calculator",
  "type": "worker",
  "version": "0.1.0",
  "api_version": "0.1"
}
</config>

<script>
fn calc_exp(x) = exp(x)
</script>
"""


@pytest.fixture
def calculator_source() -> str:
    return CALCULATOR_SOURCE


def make_plugin_source(
    name: str,
    script: str,
    *,
    kind: str = "worker",
    version: str = "0.1.0",
    extra_config: dict | None = None,
) -> str:
    """Build a minimal plugin document around a script body."""
    import json

    config = {"name": name, "type": kind, "version": version, "api_version": "0.1"}
    if extra_config:
        config.update(extra_config)
    return f"<config>\n{json.dumps(config, indent=2)}\n</config>\n\n<script>\n{script}\n</script>\n"


def async_test(fn):
    """Run an async test function on a fresh event loop."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return asyncio.run(fn(*args, **kwargs))

    return wrapper
