import numpy as np
import pytest

from utils.geometry import PointCloud, gen_uniform_square, knn_support
from utils.kernels import TruncatedKernel


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow reproductions')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def corners():
    return PointCloud(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))


@pytest.fixture(scope='module')
def small_cloud():
    # Same point density as the 30000-point study on a 10 x 10 square
    return gen_uniform_square(300, side=10.0 * np.sqrt(300 / 30000), seed=11)


@pytest.fixture(scope='module')
def small_kernel(small_cloud):
    return TruncatedKernel(knn_support(small_cloud, 8))
