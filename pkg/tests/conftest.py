from __future__ import annotations

from pathlib import Path

import pytest

from groupsim.dataset import Catalog, build_store
from groupsim.llm import LLMClient, MockBackend, ResponseCache
from groupsim.synthetic import make_synthetic

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when in ("call", "setup"):
        name = report.nodeid.split("::")[-1]
        if report.when == "setup" and not report.skipped:
            return
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _acceptance[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance.items():
        terminalreporter.write_line(f"{outcome:4}  {name}")


def tiny_store(user_items, group_items, memberships, texts=None):
    users = sorted({u for u, _ in user_items} | {u for _, u in memberships})
    groups = sorted({g for g, _ in memberships})
    items = sorted({i for _, i in user_items} | {i for _, i in group_items} | set(texts or {}))
    texts = {i: (texts or {}).get(i, f"description of {i}") for i in items}
    cat = Catalog(tuple(users), tuple(items), tuple(groups), texts)
    return build_store(cat, user_items, group_items, memberships)


@pytest.fixture
def mock_client():
    def make(seed: int = 0, overrides=None, **kw) -> LLMClient:
        return LLMClient(MockBackend(seed, overrides), ResponseCache(), sleep=lambda s: None, **kw)
    return make


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory) -> Path:
    return make_synthetic(tmp_path_factory.mktemp("synth") / "data", n_users=60, n_items=120, n_groups=30, seed=3)
