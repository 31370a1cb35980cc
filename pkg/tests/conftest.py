import os

import pytest

from fquant.gridstore import GridStore

SEED = 2024


@pytest.fixture(scope="session")
def grid_store(tmp_path_factory):
    """Grid store for optimized quantizers.

    A fresh temporary store by default, so every run rebuilds the grids it
    needs.  Setting FQUANT_TEST_GRID_DIR reuses a persistent store.
    """
    root = os.environ.get("FQUANT_TEST_GRID_DIR")
    return GridStore(root if root else tmp_path_factory.mktemp("grids"))


@pytest.fixture(scope="session")
def optimal_fq(grid_store):
    cache = {}

    def get(N):
        if N not in cache:
            cache[N] = grid_store.functional(N, seed=SEED)
        return cache[N]

    return get
