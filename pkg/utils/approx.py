"""Kernel-approximation estimators, FLOP accounting and error measurement.

Three schemes approximate the truncated Gaussian kernel over all ordered
pairs of a point cloud: random Fourier features (RFF), OR-only E2LSH
(m2 = 1) and OR & AND E2LSH. The LSH estimator evaluates the true
truncated kernel on collided pairs and returns 0 elsewhere, so its error
comes only from support pairs that never collide.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config.settings import APPROX_CONFIG, SEED_STREAMS, derive_seed
from utils.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    InsufficientPointsError,
    InvalidFeatureCountError,
    MismatchedCloudError,
    ValidationError,
)
from utils.geometry import PointCloud, pair_distances
from utils.kernels import RffMap, TruncatedKernel, gaussian_eval
from utils.lsh import CollisionTables, collision_prob, lsh_collision_tables

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['scheme', 'n', 'd', 'm1', 'm2', 'r', 'D', 'seed', 'flops', 'epsilon', 'trials', 'collisions']


class Scheme(str, Enum):
    RFF = 'rff'
    OR_ONLY = 'or_only'
    OR_AND = 'or_and'


@dataclass(frozen=True)
class ApproxConfig:
    """Parameters of one estimator run: D for RFF, (m1, m2, r) for LSH."""

    scheme: Scheme
    seed: int
    D: int | None = None
    m1: int | None = None
    m2: int | None = None
    r: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, 'scheme', Scheme(self.scheme))
        if self.scheme is Scheme.RFF:
            if self.D is None or any(v is not None for v in (self.m1, self.m2, self.r)):
                raise ValidationError("an RFF config takes D and no LSH parameters")
            if self.D < 2 or self.D % 2:
                raise InvalidFeatureCountError(f"RFF feature count D must be even and >= 2, got {self.D}")
            return

        if self.D is not None or self.m1 is None or self.r is None:
            raise ValidationError(f"a {self.scheme.value} config takes m1, m2, r and no D")
        if self.scheme is Scheme.OR_ONLY:
            if self.m2 not in (None, 1):
                raise ValidationError(f"OR-only LSH has m2 = 1, got {self.m2}")
            object.__setattr__(self, 'm2', 1)
        if self.m2 is None or self.m1 < 1 or self.m2 < 1:
            raise ValidationError(f"need m1 >= 1 and m2 >= 1, got m1={self.m1}, m2={self.m2}")
        if not self.r > 0:
            raise ValidationError(f"bucket width r must be positive, got {self.r}")

    @property
    def is_lsh(self) -> bool:
        return self.scheme is not Scheme.RFF


@dataclass(frozen=True)
class ApproxReport:
    """Outcome of one run; collisions is the total C fed to the FLOP counter."""

    config: ApproxConfig
    n: int
    d: int
    flops: int
    epsilon: float
    trials: int = 1
    collisions: int = 0

    def to_record(self) -> dict:
        c = self.config
        return {
            'scheme': c.scheme.value, 'n': self.n, 'd': self.d,
            'm1': c.m1, 'm2': c.m2, 'r': c.r, 'D': c.D, 'seed': c.seed,
            'flops': self.flops, 'epsilon': self.epsilon,
            'trials': self.trials, 'collisions': self.collisions,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ApproxReport":
        def maybe(value, cast):
            if value is None or (isinstance(value, float) and math.isnan(value)):
                return None
            return cast(value)

        config = ApproxConfig(
            scheme=Scheme(record['scheme']), seed=int(record['seed']),
            D=maybe(record.get('D'), int), m1=maybe(record.get('m1'), int),
            m2=maybe(record.get('m2'), int), r=maybe(record.get('r'), float),
        )
        return cls(config, int(record['n']), int(record['d']), int(record['flops']),
                   float(record['epsilon']), int(record.get('trials', 1)), int(record.get('collisions', 0) or 0))


def _ordered_pair_count(n: int) -> int:
    if n < 2:
        raise InsufficientPointsError(f"need at least 2 points for an ordered-pair average, got {n}")
    return n * (n - 1)


def _check_support_distances(kernel: TruncatedKernel, distances) -> np.ndarray:
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != (len(kernel.support),):
        raise MismatchedCloudError(
            f"expected {len(kernel.support)} support distances, got shape {distances.shape}")
    return distances


def _missed_mass(kernel_sq, collided) -> float:
    """Sum of squared kernel values on support pairs that never collided"""
    return float(np.sum(kernel_sq[~collided]))


def lsh_epsilon_empirical(
    kernel: TruncatedKernel,
    collisions: CollisionTables,
    distances,
    estimator: str = APPROX_CONFIG['estimator'],
    cloud: PointCloud | None = None,
) -> float:
    """Mean squared error over ordered pairs of the LSH estimator.

    ``distances`` are the support-aligned distances. With
    ``estimator="gaussian"`` collided pairs are evaluated with the untruncated
    Gaussian instead, which adds the kernel value of every collided
    off-support pair; this needs ``cloud``.
    """
    if collisions.n != kernel.n:
        raise MismatchedCloudError(f"collision tables cover {collisions.n} points, support covers {kernel.n}")
    distances = _check_support_distances(kernel, distances)
    pairs = _ordered_pair_count(kernel.n)

    collided = collisions.collided(kernel.support.src, kernel.support.dst)
    error = _missed_mass(kernel.values(distances) ** 2, collided)

    if estimator == 'gaussian':
        if cloud is None or cloud.n != kernel.n:
            raise MismatchedCloudError("the untruncated estimator needs the cloud the support was built on")
        keys = collisions.union_pair_keys()
        src, dst = keys // kernel.n, keys % kernel.n
        outside = ~kernel.support.lookup(src, dst)
        error += float(np.sum(gaussian_eval(pair_distances(cloud, src[outside], dst[outside])) ** 2))
    elif estimator != 'truncated':
        raise ValidationError(f"unknown estimator '{estimator}'")
    return error / pairs


def lsh_epsilon_expected(kernel: TruncatedKernel, distances, m1: int, m2: int, r: float) -> float:
    """Expected LSH error: sum over support of (1 - p_r(z)^m2)^m1 k(z)^2, over n(n-1)"""
    distances = _check_support_distances(kernel, distances)
    pairs = _ordered_pair_count(kernel.n)
    miss = (1.0 - collision_prob(distances, r) ** m2) ** m1
    return float(np.sum(miss * kernel.values(distances) ** 2)) / pairs


def lsh_flops(n: int, d: int, m1: int, m2: int, observed_collisions: int) -> int:
    """FLOPs of hashing, evaluating collided pairs and merging the tables"""
    if min(n, d, m1, m2, observed_collisions) < 0:
        raise ValidationError("FLOP counter inputs must be nonnegative")
    hashing = m1 * m2 * n * (2 * d - 1)
    evaluation = 4 * d * observed_collisions + m1 * n * d
    combining = max(m1 - 1, 0) * n * d
    return int(hashing + evaluation + combining)


def rff_flops(n: int, d: int, D: int) -> int:
    """FLOPs of features for both sides, Y'^T V and the final product"""
    if min(n, d) < 1:
        raise ValidationError(f"need n, d >= 1, got n={n}, d={d}")
    if D < 2 or D % 2:
        raise InvalidFeatureCountError(f"RFF feature count D must be even and >= 2, got {D}")
    return int(n * D * (2 * d - 1) + n * d + D * d * (2 * n - 1) + n * d * (2 * D - 1))


def rff_epsilon_empirical(kernel: TruncatedKernel, rff_map: RffMap, cloud: PointCloud) -> float:
    """Mean squared error of psi(x).psi(y) against the truncated kernel over ordered pairs"""
    if rff_map.dim != cloud.k2:
        raise DimensionMismatchError(f"map dimension {rff_map.dim} != coordinate dimension {cloud.k2}")
    if cloud.n != kernel.n:
        raise MismatchedCloudError(f"support built over {kernel.n} points, cloud has {cloud.n}")
    pairs = _ordered_pair_count(cloud.n)

    psi = rff_map.features(cloud.coords)
    # Sum of squared estimates over u != v without forming the n x n matrix
    gram = psi.T @ psi
    self_sq = np.sum(psi ** 2, axis=1) ** 2
    estimate_sq = float(np.sum(gram ** 2) - np.sum(self_sq))

    src, dst = kernel.support.src, kernel.support.dst
    estimates = np.sum(psi[src] * psi[dst], axis=1)
    truth = kernel.values(kernel.support_distances(cloud))
    error = estimate_sq - 2.0 * float(np.sum(estimates * truth)) + float(np.sum(truth ** 2))
    return max(error, 0.0) / pairs


def evaluate_lsh(cloud: PointCloud, kernel: TruncatedKernel, distances, config: ApproxConfig,
                 estimator: str = APPROX_CONFIG['estimator']) -> ApproxReport:
    """One seeded LSH run on the cloud coordinates"""
    if not config.is_lsh:
        raise ValidationError(f"evaluate_lsh needs an LSH config, got {config.scheme.value}")
    tables = lsh_collision_tables(cloud.coords, config.m1, config.m2, config.r,
                                  derive_seed(config.seed, SEED_STREAMS['lsh']))
    epsilon = lsh_epsilon_empirical(kernel, tables, distances, estimator=estimator, cloud=cloud)
    collisions = int(sum(tables.collision_counts()))
    flops = lsh_flops(cloud.n, cloud.k2, config.m1, config.m2, collisions)
    return ApproxReport(config, cloud.n, cloud.k2, flops, epsilon, collisions=collisions)


def evaluate_rff(cloud: PointCloud, kernel: TruncatedKernel, config: ApproxConfig) -> ApproxReport:
    """One seeded RFF run on the cloud coordinates"""
    if config.scheme is not Scheme.RFF:
        raise ValidationError(f"evaluate_rff needs an RFF config, got {config.scheme.value}")
    rff_map = RffMap.sample(config.D, cloud.k2, derive_seed(config.seed, SEED_STREAMS['rff']))
    epsilon = rff_epsilon_empirical(kernel, rff_map, cloud)
    return ApproxReport(config, cloud.n, cloud.k2, rff_flops(cloud.n, cloud.k2, config.D), epsilon)


def theory_epsilon_predicted(scheme, n: int, d: int, F, constant: float,
                             prefactor: float = 1.0, s: float | None = None, m: int | None = None):
    """Order-of-magnitude error predictor with calibrated hidden constants.

    RFF: constant * n d / F. OR-only: (prefactor / n) exp(-constant F / (d n^2 s)),
    s the support size per point. OR & AND: (prefactor / n)
    exp(-constant F / (d n (ceil(log2 n) + m))), m the functions per table.
    """
    scheme = Scheme(scheme)
    F = np.asarray(F, dtype=np.float64)
    if scheme is Scheme.RFF:
        with np.errstate(divide='ignore'):
            prediction = constant * n * d / F
    else:
        prediction = prefactor / n * np.exp(-constant * F / _decay_scale(scheme, n, d, s, m))
    return float(prediction) if prediction.ndim == 0 else prediction


def _decay_scale(scheme: Scheme, n: int, d: int, s, m) -> float:
    if scheme is Scheme.OR_ONLY:
        if s is None or s <= 0:
            raise ValidationError("the OR-only predictor needs a positive support size s")
        return d * n ** 2 * s
    if m is None or m < 1:
        raise ValidationError("the OR & AND predictor needs m >= 1")
    return d * n * (math.ceil(math.log2(n)) + m)


@dataclass(frozen=True)
class TheoryPredictor:
    """Predictor for one scheme with constants fit on anchor runs."""

    scheme: Scheme
    n: int
    d: int
    constant: float
    prefactor: float = 1.0
    s: float | None = None
    m: int | None = None

    @classmethod
    def calibrate(cls, scheme, n: int, d: int, flops, epsilon, s=None, m=None) -> "TheoryPredictor":
        """Least squares on log-error over the anchor (flops, epsilon) points"""
        scheme = Scheme(scheme)
        flops = np.asarray(flops, dtype=np.float64)
        epsilon = np.asarray(epsilon, dtype=np.float64)
        usable = (epsilon > 0) & (flops > 0)
        if not np.any(usable):
            raise DegenerateInputError("calibration needs at least one run with positive error and FLOPs")
        log_eps = np.log(epsilon[usable])

        if scheme is Scheme.RFF:
            constant = float(np.exp(np.mean(log_eps - np.log(n * d / flops[usable]))))
            return cls(scheme, n, d, constant)

        x = flops[usable] / _decay_scale(scheme, n, d, s, m)
        if np.unique(x).size < 2:
            raise DegenerateInputError("exponential calibration needs two distinct FLOP counts")
        # log eps = log(A) - log(n) - c x
        design = np.column_stack([np.ones_like(x), -x])
        (log_prefactor, constant), *_ = np.linalg.lstsq(design, log_eps + math.log(n), rcond=None)
        return cls(scheme, n, d, float(constant), float(np.exp(log_prefactor)), s, m)

    def predict(self, F):
        return theory_epsilon_predicted(self.scheme, self.n, self.d, F, self.constant, self.prefactor, self.s, self.m)
