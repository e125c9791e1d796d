import numpy as np
import pytest
from helpers import collect_episodes, random_windows

from aesmpfp.rssm import RSSM


@pytest.fixture(scope="session")
def scripted_episodes():
    return collect_episodes(1000)


@pytest.fixture(scope="session")
def trained_rssm(scripted_episodes):
    """Default-size model after a short training run on scripted data."""
    rng = np.random.default_rng(0)
    model = RSSM(rng=np.random.default_rng(1))
    for _ in range(300):
        model.train_step(random_windows(scripted_episodes, rng, 32), rng, 1e-3)
    return model


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one exit criterion as a PASS/FAIL line, then fail the test if it did not hold."""

    def record(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
