import os

import pytest
from hypothesis import HealthCheck, settings

from ricci_lab.flow import FlowConfig, run_flow
from ricci_lab.geometry import build_cutoff, build_dumbbell

settings.register_profile("repo", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(scope="session")
def pinch_run():
    """G = 0.3 neck pinch at M = 800 with neck remeshing."""
    prof = build_dumbbell(0.3, 0.5, q=3, M=800)
    return run_flow(prof, FlowConfig(t_end=0.2, snapshot_every=500, remesh=True))


@pytest.fixture(scope="session")
def frozen_neck_run():
    """Local flow on a G = 0.2 dumbbell with the cutoff held away from the neck."""
    prof = build_dumbbell(0.2, 0.5, q=3, M=400)
    cut = build_cutoff(prof, 1.5, 0.3, 0.8)
    return run_flow(prof, FlowConfig(mode="local_ricci", cutoff=cut, t_end=0.01, snapshot_every=5))


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record a named pass/fail line for the acceptance summary and fail the test if any check is false."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number: int, title: str, checks: dict, detail: str = ""):
        ok = all(bool(v) for v in checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
