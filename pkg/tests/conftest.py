import pytest

from syntaxnav.world import WorldConfig, generate_world


@pytest.fixture(scope="session")
def small_world():
    return generate_world(3, WorldConfig(grid_w=4, grid_h=4, episodes=40, seen_envs=2, unseen_envs=1, feature_dim=8))


@pytest.fixture(scope="session")
def desk_world():
    return generate_world(0, WorldConfig())
