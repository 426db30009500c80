import math

import numpy as np
import pytest

from utils.approx import (
    ApproxConfig,
    ApproxReport,
    Scheme,
    TheoryPredictor,
    evaluate_lsh,
    evaluate_rff,
    lsh_epsilon_empirical,
    lsh_epsilon_expected,
    lsh_flops,
    rff_epsilon_empirical,
    rff_flops,
    theory_epsilon_predicted,
)
from utils.errors import (
    InsufficientPointsError,
    InvalidFeatureCountError,
    MismatchedCloudError,
    ValidationError,
)
from utils.geometry import PointCloud, SupportSet, gen_uniform_square, knn_support
from utils.kernels import RffMap, TruncatedKernel, rff_epsilon_expected
from utils.lsh import collision_prob, lsh_collision_tables


def test_lsh_flops_worked_examples():
    n, d = 100, 2
    assert lsh_flops(n, d, 1, 1, 0) == n * (2 * d - 1) + n * d
    assert lsh_flops(100, 2, 2, 1, 500) == 5200
    assert lsh_flops(100, 2, 3, 4, 0) == 3 * 4 * 100 * 3 + 3 * 100 * 2 + 2 * 100 * 2
    with pytest.raises(ValidationError):
        lsh_flops(100, 2, 1, 1, -1)


def test_lsh_flops_hash_term_is_linear_in_tables():
    def hashing(m1):
        return lsh_flops(50, 3, m1, 2, 0) - lsh_flops(50, 3, m1, 1, 0)

    assert hashing(4) == 2 * hashing(2)


def test_rff_flops_worked_examples():
    assert rff_flops(1, 1, 2) == 8
    assert rff_flops(30000, 2, 100) == 9_000_000 + 60_000 + 11_999_800 + 11_940_000
    assert rff_flops(200, 2, 16) - rff_flops(100, 2, 16) == rff_flops(300, 2, 16) - rff_flops(200, 2, 16)
    with pytest.raises(InvalidFeatureCountError):
        rff_flops(10, 2, 3)


@pytest.mark.parametrize('kwargs, error', [
    ({'scheme': 'rff', 'D': 7}, InvalidFeatureCountError),
    ({'scheme': 'rff', 'D': 8, 'm1': 1}, ValidationError),
    ({'scheme': 'or_only', 'm1': 2, 'm2': 3, 'r': 1.0}, ValidationError),
    ({'scheme': 'or_and', 'm1': 0, 'm2': 2, 'r': 1.0}, ValidationError),
    ({'scheme': 'or_and', 'm1': 1, 'm2': 2, 'r': 0.0}, ValidationError),
    ({'scheme': 'or_and', 'm1': 1, 'm2': 2, 'r': 1.0, 'D': 4}, ValidationError),
])
def test_config_validation(kwargs, error):
    with pytest.raises(error):
        ApproxConfig(seed=0, **kwargs)


def test_or_only_config_fixes_one_function_per_table():
    config = ApproxConfig('or_only', 3, m1=2, r=1.0)
    assert config.scheme is Scheme.OR_ONLY and config.m2 == 1 and config.is_lsh
    assert not ApproxConfig(Scheme.RFF, 3, D=4).is_lsh


def test_report_record_keeps_missing_parameters_empty():
    report = ApproxReport(ApproxConfig(Scheme.RFF, 5, D=4), 10, 2, 123, 0.25)
    record = report.to_record()
    assert record['m1'] is None and record['r'] is None
    record.update({'m1': float('nan'), 'm2': float('nan'), 'r': float('nan')})
    assert ApproxReport.from_record(record) == report


def test_two_point_expected_error():
    cloud = PointCloud(np.array([[0.0, 0.0], [1.0, 0.0]]))
    kernel = TruncatedKernel(SupportSet(np.array([0]), np.array([1]), 2))
    distances = kernel.support_distances(cloud)
    expected = lsh_epsilon_expected(kernel, distances, 1, 1, 1.0)
    assert expected == pytest.approx((1 - 0.36874) * math.exp(-1.0) / 2, abs=1e-5)


def test_expected_error_shrinks_with_more_tables(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    values = [lsh_epsilon_expected(small_kernel, distances, m1, 2, 0.5) for m1 in range(1, 12)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert lsh_epsilon_expected(small_kernel, distances, 2000, 1, 0.5) < 1e-12


def test_expected_error_with_one_function_is_the_or_only_form(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    miss = (1 - collision_prob(distances, 0.8)) ** 3
    manual = np.sum(miss * np.exp(-distances ** 2)) / (small_cloud.n * (small_cloud.n - 1))
    assert lsh_epsilon_expected(small_kernel, distances, 3, 1, 0.8) == pytest.approx(manual)


def test_empirical_error_extremes(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    everything = lsh_collision_tables(small_cloud.coords, 1, 1, 1e9, seed=1)
    assert lsh_epsilon_empirical(small_kernel, everything, distances) == 0.0

    nothing = lsh_collision_tables(small_cloud.coords, 1, 1, 1e-9, seed=1)
    total = np.sum(np.exp(-distances ** 2)) / (small_cloud.n * (small_cloud.n - 1))
    assert lsh_epsilon_empirical(small_kernel, nothing, distances) == pytest.approx(total)


def test_untruncated_estimator_adds_off_support_collisions(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    tables = lsh_collision_tables(small_cloud.coords, 2, 1, 0.5, seed=4)
    truncated = lsh_epsilon_empirical(small_kernel, tables, distances)
    gaussian = lsh_epsilon_empirical(small_kernel, tables, distances, estimator='gaussian', cloud=small_cloud)
    assert gaussian > truncated
    with pytest.raises(MismatchedCloudError):
        lsh_epsilon_empirical(small_kernel, tables, distances, estimator='gaussian')
    with pytest.raises(ValidationError):
        lsh_epsilon_empirical(small_kernel, tables, distances, estimator='nearest')


def test_empirical_error_rejects_other_clouds(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    other = lsh_collision_tables(small_cloud.coords[:50], 1, 1, 1.0, seed=0)
    with pytest.raises(MismatchedCloudError):
        lsh_epsilon_empirical(small_kernel, other, distances)
    tables = lsh_collision_tables(small_cloud.coords, 1, 1, 1.0, seed=0)
    with pytest.raises(MismatchedCloudError):
        lsh_epsilon_empirical(small_kernel, tables, distances[:-1])


def test_single_point_has_no_pairs():
    kernel = TruncatedKernel(SupportSet(np.empty(0), np.empty(0), 1))
    with pytest.raises(InsufficientPointsError):
        lsh_epsilon_expected(kernel, np.empty(0), 1, 1, 1.0)


def test_or_and_with_one_function_reduces_to_or_only(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    rng = np.random.default_rng(2024)
    for _ in range(100):
        m1 = int(rng.integers(1, 8))
        r = float(rng.uniform(0.01, 5.0))
        seed = int(rng.integers(0, 2 ** 31))
        or_only = evaluate_lsh(small_cloud, small_kernel, distances, ApproxConfig(Scheme.OR_ONLY, seed, m1=m1, r=r))
        or_and = evaluate_lsh(small_cloud, small_kernel, distances,
                              ApproxConfig(Scheme.OR_AND, seed, m1=m1, m2=1, r=r))
        assert or_and.epsilon == or_only.epsilon
        assert or_and.flops == or_only.flops
        assert or_and.collisions == or_only.collisions


def test_reported_flops_follow_from_logged_collisions(small_cloud, small_kernel):
    distances = small_kernel.support_distances(small_cloud)
    report = evaluate_lsh(small_cloud, small_kernel, distances, ApproxConfig(Scheme.OR_AND, 7, m1=3, m2=2, r=0.6))
    assert report.flops == lsh_flops(report.n, report.d, 3, 2, report.collisions)
    assert 0.0 <= report.epsilon <= 1.0


def _empirical_vs_expected(n, seeds, m1, m2, r):
    cloud = gen_uniform_square(n, side=10.0 * math.sqrt(n / 30000), seed=n)
    kernel = TruncatedKernel(knn_support(cloud, 16))
    distances = kernel.support_distances(cloud)
    runs = np.array([
        evaluate_lsh(cloud, kernel, distances, ApproxConfig(Scheme.OR_AND, seed, m1=m1, m2=m2, r=r)).epsilon
        for seed in range(seeds)
    ])
    expected = lsh_epsilon_expected(kernel, distances, m1, m2, r)
    return runs.mean(), runs.std(ddof=1) / math.sqrt(seeds), expected


def test_seed_averaged_error_matches_expectation():
    mean, stderr, expected = _empirical_vs_expected(400, 100, 2, 2, 1.0)
    assert abs(mean - expected) <= 3 * stderr


@pytest.mark.slow
def test_seed_averaged_error_matches_expectation_at_scale():
    rng = np.random.default_rng(2000)
    for _ in range(10):
        m1, m2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        r = float(rng.uniform(0.1, 0.6))
        mean, _, expected = _empirical_vs_expected(2000, 200, m1, m2, r)
        assert mean == pytest.approx(expected, rel=0.05), (m1, m2, r)


def test_rff_error_matches_variance_plus_truncation_bias():
    cloud = gen_uniform_square(2000, side=10.0 * math.sqrt(2000 / 30000), seed=21)
    kernel = TruncatedKernel(knn_support(cloud, 16))
    D = 100
    maps = 50
    runs = [rff_epsilon_empirical(kernel, RffMap.sample(D, 2, seed), cloud) for seed in range(maps)]
    assert np.mean(runs) == pytest.approx(rff_epsilon_expected(kernel, cloud, D), rel=0.05)


def test_rff_error_vanishes_on_identical_points():
    cloud = PointCloud(np.array([[0.5, 0.5], [0.5, 0.5]]))
    kernel = TruncatedKernel(SupportSet(np.array([0, 1]), np.array([1, 0]), 2))
    assert rff_epsilon_empirical(kernel, RffMap.sample(32, 2, seed=3), cloud) == pytest.approx(0.0, abs=1e-12)


def test_evaluate_rff_is_seeded(small_cloud, small_kernel):
    config = ApproxConfig(Scheme.RFF, 11, D=16)
    a = evaluate_rff(small_cloud, small_kernel, config)
    b = evaluate_rff(small_cloud, small_kernel, config)
    assert a == b
    assert a.flops == rff_flops(small_cloud.n, 2, 16)
    with pytest.raises(ValidationError):
        evaluate_rff(small_cloud, small_kernel, ApproxConfig(Scheme.OR_ONLY, 11, m1=1, r=1.0))


def test_theory_predictor_shapes():
    assert theory_epsilon_predicted('rff', 100, 2, 2000.0, 1.0) == pytest.approx(
        2 * theory_epsilon_predicted('rff', 100, 2, 4000.0, 1.0))
    assert theory_epsilon_predicted('or_only', 100, 2, 0.0, 3.0, prefactor=0.7, s=64) == pytest.approx(0.7 / 100)
    curve = theory_epsilon_predicted('or_and', 100, 2, np.linspace(0, 1e6, 20), 2.0, m=3)
    assert np.all(np.diff(curve) < 0)
    with pytest.raises(ValidationError):
        theory_epsilon_predicted('or_only', 100, 2, 10.0, 1.0)


def test_theory_predictor_recovers_constants():
    n, d, m = 500, 2, 4
    flops = np.array([1e5, 5e5, 1e6, 4e6])
    scale = d * n * (math.ceil(math.log2(n)) + m)
    epsilon = 0.3 / n * np.exp(-1.7 * flops / scale)
    predictor = TheoryPredictor.calibrate('or_and', n, d, flops, epsilon, m=m)
    assert predictor.constant == pytest.approx(1.7)
    assert predictor.prefactor == pytest.approx(0.3)
    assert predictor.predict(2e6) == pytest.approx(0.3 / n * math.exp(-1.7 * 2e6 / scale))

    rff = TheoryPredictor.calibrate('rff', n, d, flops, 2.5 * n * d / flops)
    assert rff.constant == pytest.approx(2.5)
