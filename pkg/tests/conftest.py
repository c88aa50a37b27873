import numpy as np
import pytest

from acrl.core import RewardConfig
from acrl.synthenv import EnvConfig


@pytest.fixture
def env2():
    """Four attributes, one question type needing attributes 0 and 1."""
    return EnvConfig(F=4, V=3, T_q=1, required_sets=[{0, 1}], p_ask=1.0, p_guess=0.0)


@pytest.fixture
def tiered():
    return RewardConfig(alpha=0.7)


@pytest.fixture
def binary():
    return RewardConfig(mode="binary")


def fixed_sampler(mask, theta=None):
    """Caption sampler that always discloses ``mask``."""
    from acrl.core import Caption

    mask = np.asarray(mask, dtype=bool)

    def _sample(scene, question, rng):
        return Caption.from_mask(scene, mask), -1.0

    return _sample


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
