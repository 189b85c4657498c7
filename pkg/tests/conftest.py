import time

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(request):
    """``report(k, ok, detail, t0)`` prints one acceptance line now and again in the session summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(k: int, ok: bool, detail: str, t0: float) -> None:
        line = f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - t0:.1f}s)"
        _ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
