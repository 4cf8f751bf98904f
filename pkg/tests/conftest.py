import numpy as np
import pytest

from apolab.policy import TabularPolicy, World, normalize_log_policy


def policy(*rows) -> TabularPolicy:
    return TabularPolicy.from_probs(np.array(rows, dtype=float))


def random_policy(rng: np.random.Generator, nx: int, ny: int) -> TabularPolicy:
    return normalize_log_policy(np.log(rng.dirichlet(np.ones(ny), size=nx)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def world2():
    return World.uniform(1, 2)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
