import numpy as np
import pytest

from utils.errors import (
    EmptyInputError,
    InsufficientPointsError,
    InvalidDimensionError,
    InvalidKError,
    ShapeMismatchError,
    ValidationError,
)
from utils.geometry import (
    PointCloud,
    SupportSet,
    distance_histogram,
    gen_uniform_ball,
    gen_uniform_square,
    knn_support,
    pair_distances,
    radius_support,
)


def test_uniform_square_is_seeded_and_in_range():
    a = gen_uniform_square(500, side=3.0, seed=7)
    b = gen_uniform_square(500, side=3.0, seed=7)
    c = gen_uniform_square(500, side=3.0, seed=8)
    assert a.n == 500 and a.k2 == 2
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, c.coords)
    assert a.coords.min() >= 0.0 and a.coords.max() < 3.0
    assert a.fingerprint() == b.fingerprint()


def test_uniform_ball_stays_inside_unit_ball():
    cloud = gen_uniform_ball(400, 3, seed=2)
    assert cloud.coords.shape == (400, 3)
    assert np.all(np.linalg.norm(cloud.coords, axis=1) <= 1.0 + 1e-12)


def test_uniform_ball_fills_volume_evenly():
    cloud = gen_uniform_ball(10000, 3, seed=0)
    inner = np.mean(np.linalg.norm(cloud.coords, axis=1) <= 0.5)
    assert inner == pytest.approx(0.125, abs=0.02)


@pytest.mark.parametrize('coords, error', [
    (np.empty((0, 2)), EmptyInputError),
    (np.zeros(3), ShapeMismatchError),
    (np.empty((3, 0)), InvalidDimensionError),
    (np.array([[0.0, np.nan]]), ValidationError),
])
def test_point_cloud_rejects_bad_coordinates(coords, error):
    with pytest.raises(error):
        PointCloud(coords)


def test_knn_on_square_corners_picks_adjacent_corners(corners):
    support = knn_support(corners, 2)
    assert support.pairs == {
        (0, 1), (0, 2), (1, 0), (1, 3), (2, 0), (2, 3), (3, 1), (3, 2),
    }
    assert np.all(support.out_degree() == 2)


@pytest.mark.parametrize('k', [0, 4])
def test_knn_rejects_k_outside_range(corners, k):
    with pytest.raises(InvalidKError):
        knn_support(corners, k)


@pytest.mark.parametrize('method', ['brute', 'grid'])
def test_knn_ties_go_to_smaller_index(method):
    cloud = PointCloud(np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]]))
    support = knn_support(cloud, 1, method=method)
    assert support.contains(0, 1)
    assert not support.contains(0, 2)


def _clustered(n, seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 10.0, size=(5, 2))
    return PointCloud(centers[rng.integers(0, 5, size=n)] + 0.05 * rng.standard_normal((n, 2)))


def _lattice(side):
    xs, ys = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float))
    return PointCloud(np.column_stack([xs.ravel(), ys.ravel()]))


@pytest.mark.parametrize('cloud, k', [
    (gen_uniform_square(400, side=2.0, seed=3), 8),
    (gen_uniform_square(1000, side=5.0, seed=4), 16),
    (gen_uniform_square(50, side=1.0, seed=5), 49),
    (gen_uniform_ball(500, 3, seed=6), 10),
    (_clustered(600, seed=7), 12),
    (_lattice(12), 4),
    (_lattice(12), 9),
    (PointCloud(np.repeat(np.array([[0.0, 0.0], [1.0, 1.0], [3.0, 0.5]]), 7, axis=0)), 8),
])
def test_grid_knn_matches_brute_force(cloud, k):
    brute = knn_support(cloud, k, method='brute')
    grid = knn_support(cloud, k, method='grid')
    assert brute.pairs == grid.pairs


def test_symmetric_support_is_closed_under_reversal(small_cloud):
    directed = knn_support(small_cloud, 5)
    symmetric = knn_support(small_cloud, 5, symmetric=True)
    assert directed.pairs <= symmetric.pairs
    assert all((v, u) in symmetric.pairs for u, v in symmetric.pairs)


def test_support_rejects_diagonal_pairs():
    with pytest.raises(ValidationError):
        SupportSet(np.array([0, 1]), np.array([1, 1]), 3)


def test_support_lookup_is_vectorized():
    support = SupportSet(np.array([2, 0, 1]), np.array([0, 1, 2]), 3)
    found = support.lookup(np.array([0, 1, 2, 1]), np.array([1, 2, 0, 0]))
    assert found.tolist() == [True, True, True, False]
    assert len(support) == 3


def test_radius_support_matches_explicit_distances():
    cloud = gen_uniform_square(150, side=2.0, seed=5)
    s = 0.3
    support = radius_support(cloud, s)
    diff = cloud.coords[:, None, :] - cloud.coords[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    src, dst = np.nonzero((dist <= s) & ~np.eye(cloud.n, dtype=bool))
    assert support.pairs == set(zip(src.tolist(), dst.tolist()))


def test_pair_distances(corners):
    assert pair_distances(corners, [0, 0], [1, 3]) == pytest.approx([1.0, np.sqrt(2.0)])


def test_histogram_of_square_corners(corners):
    histogram = distance_histogram(corners, bins=10, value_range=(0.0, 2.0))
    # 8 ordered pairs at distance 1, 4 along the diagonals
    assert histogram.masses[5] == pytest.approx(8 / 12)
    assert histogram.masses[7] == pytest.approx(4 / 12)
    assert histogram.masses.sum() == pytest.approx(1.0)
    assert histogram.cdf(1.3) == pytest.approx(8 / 12)
    assert histogram.cdf(2.0) == pytest.approx(1.0)


def test_histogram_masses_sum_to_one(small_cloud):
    assert distance_histogram(small_cloud).masses.sum() == pytest.approx(1.0)


def test_histogram_needs_two_points():
    with pytest.raises(InsufficientPointsError):
        distance_histogram(PointCloud(np.zeros((1, 2))))
