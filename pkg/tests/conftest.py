import os

import pytest
from hypothesis import HealthCheck, settings

from semmec.config import EnvConfig

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def config():
    return EnvConfig()


@pytest.fixture
def small_config():
    return EnvConfig(n_ues=2, k_channels=2, queue_len=5)


TRAIN_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def mappo_pairs():
    """Semantic-aware and mu-fixed MAPPO trained with default settings on three seeds."""
    from semmec.mappo import MAPPOOffloader

    cfg = EnvConfig()
    return {
        seed: {
            "aware": MAPPOOffloader(random_state=seed).fit(cfg),
            "unaware": MAPPOOffloader(random_state=seed, semantic_aware=False).fit(cfg),
        }
        for seed in TRAIN_SEEDS
    }
