import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from ogfmap.grid import GridLattice, LatentMap  # noqa: E402
from ogfmap.covariance import DenseCovariance  # noqa: E402
from ogfmap.sim2d import GroundTruthMap  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', help='also run the full-protocol reproduction tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-protocol reproduction runs (enable with --runslow)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope='session')
def lab25():
    return GroundTruthMap.bundled()


def random_gaussian_map(rng, n, mean_scale=2.0):
    """1-D lattice map with a random well-conditioned covariance."""
    a = rng.normal(size=(n, n))
    cov = a @ a.T / n + 0.2 * np.eye(n)
    mean = rng.uniform(-mean_scale, mean_scale, size=n)
    return LatentMap(mean, DenseCovariance(cov), GridLattice((n,)))
