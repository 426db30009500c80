import numpy as np
import pytest

from utils.approx import ApproxConfig, ApproxReport, Scheme
from utils.data_loader import DataLoader, RunManifest, file_sha256
from utils.errors import DataIOError
from utils.geometry import PointCloud, SupportSet, gen_uniform_square
from utils.kernels import RffMap


@pytest.fixture
def loader():
    return DataLoader()


def test_cloud_with_features_round_trips_exactly(tmp_path, loader):
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.random((20, 2)), rng.normal(size=(20, 3)))
    path = tmp_path / 'cloud.csv'
    loader.save_cloud(cloud, path)
    loaded = loader.load_cloud(path)
    assert np.array_equal(loaded.coords, cloud.coords)
    assert np.array_equal(loaded.features, cloud.features)


def test_support_round_trip(tmp_path, loader):
    support = SupportSet([2, 0, 1], [0, 1, 2], 3)
    path = tmp_path / 'support.csv'
    loader.save_support(support, path)
    loaded = loader.load_support(path, 3)
    assert loaded.src.tolist() == [0, 1, 2]
    assert loaded.dst.tolist() == [1, 2, 0]


def test_rff_map_round_trip_keeps_features(tmp_path, loader):
    rff_map = RffMap.sample(8, 2, seed=1)
    path = tmp_path / 'rff.csv'
    loader.save_rff_map(rff_map, path)
    loaded = loader.load_rff_map(path)
    assert loaded.D == 8
    x = gen_uniform_square(5, side=1.0, seed=2).coords
    assert np.array_equal(loaded.features(x), rff_map.features(x))


def test_reports_round_trip_for_both_scheme_families(tmp_path, loader):
    reports = [
        ApproxReport(ApproxConfig(Scheme.RFF, seed=4, D=16), 100, 2, 123456, 0.0125),
        ApproxReport(ApproxConfig(Scheme.OR_AND, seed=4, m1=3, m2=2, r=0.7), 100, 2, 98765, 0.1 / 3,
                     collisions=412),
    ]
    path = tmp_path / 'reports.csv'
    loader.save_reports(reports, path)
    assert loader.load_reports(path) == reports


def test_missing_columns_and_files_raise_io_errors(tmp_path, loader):
    path = tmp_path / 'bad.csv'
    path.write_text('x,y\n1,2\n')
    with pytest.raises(DataIOError, match='missing columns'):
        loader.load_cloud(path)
    with pytest.raises(DataIOError):
        loader.load_support(tmp_path / 'absent.csv', 3)


def test_manifest_records_input_hashes(tmp_path, loader):
    cloud_path, out = tmp_path / 'cloud.csv', tmp_path / 'out.csv'
    loader.save_cloud(gen_uniform_square(10, seed=0), cloud_path)
    manifest = RunManifest.for_inputs('support', {'k': 2}, 7, [cloud_path], [out])
    written = loader.save_manifest(manifest, out)
    assert written == RunManifest.path_for(out)
    loaded = loader.load_manifest(written)
    assert loaded == manifest
    assert loaded.inputs[str(cloud_path)] == file_sha256(cloud_path)


def test_non_manifest_json_is_rejected(tmp_path, loader):
    path = tmp_path / 'other.json'
    loader.save_json({'unrelated': 1}, path)
    with pytest.raises(DataIOError, match='not a run manifest'):
        loader.load_manifest(path)
