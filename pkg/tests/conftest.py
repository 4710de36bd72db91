import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(num, title, ok, detail)``."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(num, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {title}" + (f"  ({detail})" if detail else "")
        lines[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
