import os

import pytest
from hypothesis import HealthCheck, settings

from merw.env import make_environment

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def iid(p, M, seed):
    return make_environment({"kind": "iid", "nu": {"bernoulli": {"p": p, "M": M}}, "seed": seed})


@pytest.fixture
def step2():
    return make_environment({"kind": "step", "M": 2})


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""
    def record(label: str, ok: bool, detail: str) -> None:
        CRITERIA.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
