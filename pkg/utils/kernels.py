"""Ground-truth kernels and the random Fourier feature map.

The Gaussian kernel has fixed bandwidth 1, k(z) = exp(-z^2 / 2). Other
bandwidths are handled by scaling the inputs, never the kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from config.settings import KERNEL_CONFIG
from utils.errors import (
    DiagonalPairError,
    DimensionMismatchError,
    DomainError,
    InvalidFeatureCountError,
    MismatchedCloudError,
)
from utils.geometry import PointCloud, SupportSet, iter_pair_distances, pair_distances

logger = logging.getLogger(__name__)


def gaussian_eval(z):
    """exp(-z^2 / 2) for a nonnegative distance (scalar or array)"""
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0):
        raise DomainError("kernel distance must be nonnegative")
    values = np.exp(-0.5 * z_arr ** 2)
    return float(values) if values.ndim == 0 else values


class GaussianKernel:
    """Unit-bandwidth Gaussian kernel on distances."""

    def __call__(self, z):
        return gaussian_eval(z)


@dataclass(eq=False)
class TruncatedKernel:
    """Gaussian kernel restricted to a support set; exactly 0 off support."""

    support: SupportSet
    base: GaussianKernel = field(default_factory=GaussianKernel)
    radius: float | None = None

    @property
    def n(self) -> int:
        return self.support.n

    def support_distances(self, cloud: PointCloud) -> NDArray[np.float64]:
        """Distances of the support pairs, aligned with support.src / support.dst"""
        if cloud.n != self.n:
            raise MismatchedCloudError(f"support built over {self.n} points, cloud has {cloud.n}")
        return pair_distances(cloud, self.support.src, self.support.dst)

    def values(self, distances) -> NDArray[np.float64]:
        """Kernel values for support-aligned distances"""
        return self.base(np.asarray(distances, dtype=np.float64))


def truncated_eval(kernel: TruncatedKernel, u: int, v: int, z: float) -> float:
    """Truncated kernel value of the ordered pair (u, v) at distance z"""
    if u == v:
        raise DiagonalPairError(f"diagonal pair ({u}, {u}) has no truncated kernel value")
    if not kernel.support.contains(u, v):
        return 0.0
    return gaussian_eval(z)


@dataclass(frozen=True)
class HeptKernelParams:
    """Coordinate weight of the attention kernel."""

    omega: float

    def __post_init__(self) -> None:
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega}")


def hept_concat(q, rho, omega: float) -> NDArray[np.float64]:
    """[q || sqrt(2 omega) rho] for a vector or row-wise for matrices"""
    omega = HeptKernelParams(omega).omega
    q = np.asarray(q, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if q.ndim != rho.ndim or (q.ndim == 2 and q.shape[0] != rho.shape[0]):
        raise DimensionMismatchError(f"cannot concatenate shapes {q.shape} and {rho.shape}")
    return np.concatenate([q, np.sqrt(2.0 * omega) * rho], axis=-1)


@dataclass(frozen=True, eq=False)
class RffMap:
    """Random Fourier feature map psi for the unit Gaussian kernel."""

    D: int
    w: NDArray[np.float64]
    seed: int | None = None

    def __post_init__(self) -> None:
        _check_feature_count(self.D)
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.D // 2:
            raise DimensionMismatchError(f"frequency matrix must have D/2 = {self.D // 2} rows, got {w.shape}")
        object.__setattr__(self, 'w', w)

    @classmethod
    def sample(cls, D: int, dim: int, seed: int) -> "RffMap":
        """Draw D/2 frequencies from the standard normal (Gaussian spectral density)"""
        _check_feature_count(D)
        rng = np.random.default_rng(seed)
        return cls(D, rng.standard_normal((D // 2, dim)), seed)

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def features(self, x, scale: float = 1.0) -> NDArray[np.float64]:
        """psi(x) = sqrt(2/D) (sin w1.x, cos w1.x, ...); rows for a matrix input"""
        x = np.asarray(x, dtype=np.float64) * scale
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(f"map expects dimension {self.dim}, got {x.shape[-1]}")
        proj = x @ self.w.T
        out = np.empty(proj.shape[:-1] + (self.D,), dtype=np.float64)
        out[..., 0::2] = np.sin(proj)
        out[..., 1::2] = np.cos(proj)
        return np.sqrt(2.0 / self.D) * out


def _check_feature_count(D) -> None:
    if D < 2 or D % 2 != 0:
        raise InvalidFeatureCountError(f"RFF feature count D must be even and >= 2, got {D}")


def rff_features(rff_map: RffMap, x) -> NDArray[np.float64]:
    return rff_map.features(x)


def rff_mse_expected(z, D: int):
    """Per-pair MSE of psi(x).psi(y): (1/D)(1 + k(2z) - 2 k(z)^2)"""
    _check_feature_count(D)
    k_z = gaussian_eval(z)
    k_2z = gaussian_eval(2.0 * np.asarray(z, dtype=np.float64))
    return (1.0 + k_2z - 2.0 * np.asarray(k_z) ** 2) / D


def rff_epsilon_expected(kernel: TruncatedKernel, cloud: PointCloud, D: int) -> float:
    """Analytic RFF error against the truncated kernel: variance + truncation bias"""
    _check_feature_count(D)
    n = cloud.n
    variance_total = 0.0
    gaussian_sq_total = 0.0
    for _, dist, off_diagonal in iter_pair_distances(cloud, KERNEL_CONFIG['pair_chunk_rows']):
        z = dist[off_diagonal]
        variance_total += float(np.sum(rff_mse_expected(z, D)))
        gaussian_sq_total += float(np.sum(gaussian_eval(z) ** 2))
    # On support the estimator is unbiased; off support the bias is the whole Gaussian
    support_sq = float(np.sum(kernel.values(kernel.support_distances(cloud)) ** 2))
    return (variance_total + gaussian_sq_total - support_sq) / (n * (n - 1))
