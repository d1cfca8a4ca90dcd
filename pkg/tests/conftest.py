import logging
from functools import lru_cache

import pytest

from augraph.synth import SynthConfig, generate


def pytest_configure(config):
    # the package logs warnings for near-key attributes and the like; keep test output readable
    logging.getLogger("augraph").setLevel(logging.ERROR)


@lru_cache(maxsize=None)
def synth(seed: int = 0, **kwargs):
    """Cached synthetic dataset and its database."""
    ds = generate(SynthConfig(seed=seed, **kwargs))
    return ds, ds.database()


@pytest.fixture(scope="session")
def synth0():
    return synth(0)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def report(n: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
