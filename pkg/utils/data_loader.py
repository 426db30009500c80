import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import APP_CONFIG, CLI_CONFIG
from utils.approx import REPORT_COLUMNS, ApproxReport, Scheme
from utils.attention import AttnOutput
from utils.errors import DataIOError
from utils.geometry import PointCloud, SupportSet
from utils.kernels import RffMap
from utils.tradeoff import CURVE_COLUMNS, ParetoPoint, emit_curves

logger = logging.getLogger(__name__)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, 'rb') as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b''):
                digest.update(chunk)
    except OSError as e:
        raise DataIOError(f"could not hash {path}: {e}") from e
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to replay a command: its name, resolved config and input hashes."""

    command: str
    config: dict
    master_seed: int
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = APP_CONFIG['version']
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    @classmethod
    def for_inputs(cls, command, config, master_seed, input_paths=(), outputs=()):
        inputs = {str(p): file_sha256(p) for p in input_paths}
        return cls(command, config, int(master_seed), inputs, [str(o) for o in outputs])

    @staticmethod
    def path_for(output) -> Path:
        return Path(f"{output}{CLI_CONFIG['manifest_suffix']}")


class DataLoader:
    """Class to handle reading and writing point clouds, supports, reports and run artifacts"""

    def __init__(self, float_format=CLI_CONFIG['float_format']):
        self.float_format = float_format

    # Generic frames

    def save_frame(self, frame, path):
        """Write a DataFrame as CSV with round-trip float formatting"""
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, float_format=self.float_format, lineterminator='\n')
            logger.info("wrote %d rows to %s", len(frame), path)
        except OSError as e:
            logger.error("could not write %s: %s", path, e)
            raise DataIOError(f"could not write {path}: {e}") from e

    def load_frame(self, path, required=()):
        """Read a CSV and check that the required columns are present"""
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError as e:
            raise DataIOError(f"input file not found: {path}") from e
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataIOError(f"could not read {path}: {e}") from e

        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise DataIOError(f"{path} is missing columns: {', '.join(missing)}")
        return frame

    def save_json(self, payload, path):
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as handle:
                json.dump(payload, handle, indent=2, sort_keys=True)
                handle.write('\n')
        except (OSError, TypeError) as e:
            raise DataIOError(f"could not write {path}: {e}") from e

    def load_json(self, path):
        try:
            with open(path, encoding='utf-8') as handle:
                return json.load(handle)
        except FileNotFoundError as e:
            raise DataIOError(f"input file not found: {path}") from e
        except (OSError, json.JSONDecodeError) as e:
            raise DataIOError(f"could not read {path}: {e}") from e

    # Point clouds and supports

    def save_cloud(self, cloud: PointCloud, path):
        """Columns id, c0..c{k2-1}, then f0..f{k1-1} when features are present"""
        frame = pd.DataFrame(cloud.coords, columns=[f'c{j}' for j in range(cloud.k2)])
        frame.insert(0, 'id', np.arange(cloud.n))
        if cloud.features is not None:
            for j in range(cloud.k1):
                frame[f'f{j}'] = cloud.features[:, j]
        self.save_frame(frame, path)

    def load_cloud(self, path) -> PointCloud:
        frame = self.load_frame(path, required=['id', 'c0'])
        frame = frame.sort_values('id', kind='stable')
        coord_cols = [c for c in frame.columns if c.startswith('c') and c[1:].isdigit()]
        feature_cols = [c for c in frame.columns if c.startswith('f') and c[1:].isdigit()]
        coord_cols.sort(key=lambda c: int(c[1:]))
        feature_cols.sort(key=lambda c: int(c[1:]))
        features = frame[feature_cols].to_numpy(dtype=np.float64) if feature_cols else None
        return PointCloud(frame[coord_cols].to_numpy(dtype=np.float64), features)

    def save_support(self, support: SupportSet, path):
        self.save_frame(pd.DataFrame({'src': support.src, 'dst': support.dst}), path)

    def load_support(self, path, n: int) -> SupportSet:
        frame = self.load_frame(path, required=['src', 'dst'])
        return SupportSet(frame['src'].to_numpy(dtype=np.int64), frame['dst'].to_numpy(dtype=np.int64), n)

    # Estimator artifacts

    def save_rff_map(self, rff_map: RffMap, path):
        """One row per frequency vector w_j"""
        self.save_frame(pd.DataFrame(rff_map.w, columns=[f'w{j}' for j in range(rff_map.dim)]), path)

    def load_rff_map(self, path) -> RffMap:
        frame = self.load_frame(path, required=['w0'])
        return RffMap(2 * len(frame), frame.to_numpy(dtype=np.float64))

    def save_hash_functions(self, functions, path):
        """functions: iterable of (table, slot, E2lshFunction)"""
        records = [{'table': t, 'slot': s, **f.to_record()} for t, s, f in functions]
        self.save_frame(pd.DataFrame(records), path)

    def save_reports(self, reports, path):
        self.save_frame(pd.DataFrame([r.to_record() for r in reports], columns=REPORT_COLUMNS), path)

    def load_reports(self, path) -> list:
        frame = self.load_frame(path, required=REPORT_COLUMNS[:-1])
        return [ApproxReport.from_record(record) for record in frame.to_dict('records')]

    def save_curves(self, frontier, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        emit_curves(frontier, path)
        logger.info("wrote curves to %s", path)

    def load_curves(self, path) -> list:
        frame = self.load_frame(path, required=CURVE_COLUMNS)

        def optional(value, cast):
            return None if pd.isna(value) else cast(value)

        return [
            ParetoPoint(
                Scheme(row['scheme']), int(row['budget_flops']), float(row['epsilon']),
                optional(row['epsilon_stderr'], float), optional(row['m1'], int),
                optional(row['m2'], int), optional(row['r'], float), optional(row['D'], int),
            )
            for row in frame.to_dict('records')
        ]

    # Attention outputs

    def save_attention(self, output: AttnOutput, path, extra=None):
        """Embeddings CSV plus <path>.diagnostics.json"""
        self.save_frame(pd.DataFrame(output.E, columns=[f'e{j}' for j in range(output.E.shape[1])]), path)
        diagnostics = output.diagnostics()
        diagnostics.update(extra or {})
        self.save_json(diagnostics, f"{path}.diagnostics.json")

    # Manifests

    def save_manifest(self, manifest: RunManifest, output):
        path = RunManifest.path_for(output)
        self.save_json(asdict(manifest), path)
        return path

    def load_manifest(self, path) -> RunManifest:
        payload = self.load_json(path)
        try:
            return RunManifest(**payload)
        except TypeError as e:
            raise DataIOError(f"{path} is not a run manifest: {e}") from e
