import json
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def default_runs():
    """Two independent end-to-end runs of the bundled default scenario.

    Returns ``(cfg, run1, run2, seconds_for_run1)``.
    """
    from qkd_skylink.mission import default_scenario, run_end_to_end_artifacts

    cfg = default_scenario()
    t0 = time.perf_counter()
    run1 = run_end_to_end_artifacts(cfg)
    elapsed = time.perf_counter() - t0
    return cfg, run1, run_end_to_end_artifacts(cfg), elapsed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
