import os
import sys
import time

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile(
    "thorough",
    max_examples=1000,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SUITE_BUDGET_S = 120.0
_session_start = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = list(getattr(acceptance, "RESULTS", []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    elapsed = time.perf_counter() - _session_start
    status = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(
        f"criterion 7 suite runtime {status}: this session took {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)"
    )
