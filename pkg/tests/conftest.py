import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biact.harness.collect import record_demonstration
from biact.harness.tasks import get_task, sample_scenario

settings.register_profile("biact", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("biact")

VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.failed or rep.when == "call"):
        return
    n = mark.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        reason = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        VERDICTS[n] = ("FAIL", f"{detail} [{reason.splitlines()[0][:160]}]" if detail else reason.splitlines()[0][:200])
    elif rep.when == "call":
        VERDICTS[n] = ("PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        verdict, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")


@pytest.fixture(scope="session")
def pick_task():
    return get_task("pick")


@pytest.fixture(scope="session")
def demos(pick_task):
    """One demonstration per hardness on the ladder, same placement seed."""
    return {k: record_demonstration(sample_scenario(pick_task, 11, k)) for k in pick_task.stiffness_ladder}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
