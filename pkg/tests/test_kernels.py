import math

import numpy as np
import pytest

from utils.errors import DiagonalPairError, DimensionMismatchError, DomainError, InvalidFeatureCountError
from utils.geometry import PointCloud, SupportSet
from utils.kernels import (
    GaussianKernel,
    RffMap,
    TruncatedKernel,
    gaussian_eval,
    hept_concat,
    rff_features,
    rff_mse_expected,
    truncated_eval,
)


def test_gaussian_values():
    assert gaussian_eval(0.0) == 1.0
    assert gaussian_eval(1.0) == pytest.approx(math.exp(-0.5))
    assert GaussianKernel()(np.array([0.0, 2.0])) == pytest.approx([1.0, math.exp(-2.0)])
    with pytest.raises(DomainError):
        gaussian_eval(-0.1)


def test_truncated_kernel_is_zero_off_support():
    kernel = TruncatedKernel(SupportSet(np.array([0]), np.array([1]), 3))
    assert truncated_eval(kernel, 0, 1, 1.0) == pytest.approx(math.exp(-0.5))
    assert truncated_eval(kernel, 1, 0, 1.0) == 0.0
    with pytest.raises(DiagonalPairError):
        truncated_eval(kernel, 2, 2, 0.0)


def test_hept_concat_scales_coordinates():
    q = np.array([[1.0, 2.0]])
    rho = np.array([[3.0, 4.0]])
    assert np.array_equal(hept_concat(q, rho, 0.5), [[1.0, 2.0, 3.0, 4.0]])
    assert hept_concat(q, rho, 2.0)[0, 2:] == pytest.approx([6.0, 8.0])
    with pytest.raises(DomainError):
        hept_concat(q, rho, 0.0)


@pytest.mark.parametrize('D', [0, 3, -2])
def test_rff_rejects_bad_feature_counts(D):
    with pytest.raises(InvalidFeatureCountError):
        RffMap.sample(D, 2, seed=0)


def test_rff_features_have_unit_norm_and_match_identical_points():
    rff_map = RffMap.sample(64, 2, seed=4)
    x = np.array([[0.3, -1.2], [0.3, -1.2], [2.0, 0.5]])
    psi = rff_features(rff_map, x)
    assert psi.shape == (3, 64)
    assert np.sum(psi ** 2, axis=1) == pytest.approx(np.ones(3))
    assert psi[0] @ psi[1] == pytest.approx(1.0)
    with pytest.raises(DimensionMismatchError):
        rff_map.features(np.zeros((2, 3)))


def test_rff_input_scale_matches_scaled_inputs():
    rff_map = RffMap.sample(16, 2, seed=1)
    x = np.array([[0.5, 1.5]])
    assert np.allclose(rff_map.features(x, scale=2.0), rff_map.features(2.0 * x))


def test_rff_mse_expected_vanishes_at_zero_distance():
    assert rff_mse_expected(0.0, 10) == pytest.approx(0.0)
    assert rff_mse_expected(1.0, 10) == pytest.approx((1 + math.exp(-2.0) - 2 * math.exp(-1.0)) / 10)


@pytest.mark.parametrize('D', [20, 100])
def test_rff_is_unbiased_with_the_predicted_variance(D):
    maps = 20000
    z_values = np.array([0.1, 0.5, 1.0, 2.0])
    points = np.column_stack([np.concatenate([[0.0], z_values]), np.zeros(5)])
    # One wide map cut into independent D-feature maps
    wide = RffMap.sample(maps * D, 2, seed=D)
    psi = wide.features(points) * math.sqrt(maps)
    products = (psi[0] * psi[1:]).reshape(len(z_values), maps, D).sum(axis=2)

    truth = np.exp(-0.5 * z_values ** 2)
    mean = products.mean(axis=1)
    stderr = products.std(axis=1, ddof=1) / math.sqrt(maps)
    assert np.all(np.abs(mean - truth) <= 3 * stderr)

    mse = np.mean((products - truth[:, None]) ** 2, axis=1)
    assert mse == pytest.approx(rff_mse_expected(z_values, D), rel=0.05)


def test_truncated_kernel_support_distances_follow_support_order():
    cloud = PointCloud(np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]]))
    kernel = TruncatedKernel(SupportSet(np.array([2, 0]), np.array([0, 1]), 3))
    assert kernel.support_distances(cloud) == pytest.approx([5.0, 1.0])
    assert kernel.values([0.0]) == pytest.approx([1.0])
