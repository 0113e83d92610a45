import os
from pathlib import Path

import pytest

from epictrl.config import preset
from epictrl.experiments import cached_grid


@pytest.fixture(scope="session")
def grid_cache():
    """Solved grids persist between sessions; delete the directory to force re-solving."""
    path = Path(os.environ.get("EPICTRL_TEST_CACHE", Path(__file__).resolve().parent.parent / ".grid-cache"))
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def desk_config():
    return preset("desk")


@pytest.fixture(scope="session")
def desk_grid(desk_config, grid_cache):
    return cached_grid(desk_config, grid_cache)
