import numpy as np
import pytest

from community_dyn.simulator import SimConfig, simulate


@pytest.fixture(scope="session")
def small_sim():
    """About 250 resolves and 12k votes; shared read-only across tests."""
    return simulate(SimConfig(duration_days=30, seed=11))


@pytest.fixture(scope="session")
def medium_sim():
    """About 1000 resolves and 50k votes."""
    return simulate(SimConfig(duration_days=60, seed=3))


@pytest.fixture(scope="session")
def full_sim():
    """Full-scale run: about 25k resolves and 1.3M votes."""
    return simulate(SimConfig(duration_days=400, seed=2024))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
