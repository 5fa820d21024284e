import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """The synthetic triplet set, generated once per test session."""
    from idip.store import make_fixture_set

    root = tmp_path_factory.mktemp("fixtures")
    make_fixture_set(root, size=64, damage_fraction=0.25, seed=0)
    return root
