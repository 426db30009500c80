"""Point clouds, synthetic generators, neighborhood supports and pair-distance histograms."""

from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from config.settings import GEOMETRY_CONFIG
from utils.errors import (
    EmptyInputError,
    InsufficientPointsError,
    InvalidDimensionError,
    InvalidKError,
    ShapeMismatchError,
    ValidationError,
)

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class PointCloud:
    """A set of n points with k2-dim coordinates and optional k1-dim features."""

    coords: NDArray[np.float64]
    features: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2:
            raise ShapeMismatchError(f"coords must be an n x k2 matrix, got shape {self.coords.shape}")
        if self.coords.shape[0] == 0:
            raise EmptyInputError("point cloud has no points")
        if self.coords.shape[1] == 0:
            raise InvalidDimensionError("coordinate dimension k2 must be >= 1")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("point coordinates must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != self.coords.shape[0]:
                raise ShapeMismatchError(
                    f"features must have {self.coords.shape[0]} rows, got shape {self.features.shape}"
                )

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def k2(self) -> int:
        return self.coords.shape[1]

    @property
    def k1(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def fingerprint(self) -> str:
        """Stable content hash of coordinates and features"""
        digest = hashlib.sha256(np.ascontiguousarray(self.coords).tobytes())
        if self.features is not None:
            digest.update(np.ascontiguousarray(self.features).tobytes())
        return digest.hexdigest()


@dataclass(eq=False)
class SupportSet:
    """Directed point-index pairs (u, v), u != v, kept sorted by (u, v)."""

    src: NDArray[np.int64]
    dst: NDArray[np.int64]
    n: int
    k: int | None = None
    _keys: NDArray[np.int64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        if src.shape != dst.shape:
            raise ShapeMismatchError("src and dst must have the same length")
        if np.any(src == dst):
            raise ValidationError("support must not contain diagonal pairs (u, u)")
        keys = np.unique(src * self.n + dst)
        self._keys = keys
        self.src = keys // self.n
        self.dst = keys % self.n

    def __len__(self) -> int:
        return self._keys.size

    @property
    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def lookup(self, src, dst) -> NDArray[np.bool_]:
        """Vectorized membership test for index pairs"""
        keys = np.asarray(src, dtype=np.int64) * self.n + np.asarray(dst, dtype=np.int64)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, max(self._keys.size - 1, 0))
        if self._keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        return self._keys[pos] == keys

    def contains(self, u: int, v: int) -> bool:
        return bool(self.lookup([u], [v])[0])

    def out_degree(self) -> NDArray[np.int64]:
        return np.bincount(self.src, minlength=self.n)

    def symmetrized(self) -> "SupportSet":
        """Symmetric closure: add (v, u) for every (u, v)"""
        return SupportSet(
            np.concatenate([self.src, self.dst]),
            np.concatenate([self.dst, self.src]),
            self.n,
            self.k,
        )


@dataclass(eq=False)
class DistanceHistogram:
    """Normalized histogram of ordered-pair distances."""

    edges: NDArray[np.float64]
    masses: NDArray[np.float64]

    def cdf(self, s: float) -> float:
        """Mass of all bins lying entirely at or below distance s"""
        return float(self.masses[self.edges[1:] <= s].sum())


def gen_uniform_square(n: int, side: float = GEOMETRY_CONFIG['side'], seed: int = 0) -> PointCloud:
    """n points i.i.d. uniform in [0, side]^2"""
    if n < 1:
        raise EmptyInputError("gen_uniform_square needs n >= 1")
    if side <= 0:
        raise ValidationError(f"side must be positive, got {side}")
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(0.0, side, size=(n, 2)))


def gen_uniform_ball(n: int, d: int, seed: int = 0) -> PointCloud:
    """n points i.i.d. uniform in the unit d-ball"""
    if d < 1:
        raise InvalidDimensionError(f"ball dimension must be >= 1, got {d}")
    if n < 1:
        raise EmptyInputError("gen_uniform_ball needs n >= 1")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n, d))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    # A zero Gaussian draw has probability zero; keep it on the axis anyway
    norms[norms == 0] = 1.0
    radii = rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
    return PointCloud(directions / norms * radii)


def pair_distances(cloud: PointCloud, src, dst) -> NDArray[np.float64]:
    """Euclidean distances for aligned index arrays"""
    diff = cloud.coords[np.asarray(src)] - cloud.coords[np.asarray(dst)]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def _sq_dist_rows(coords, rows) -> NDArray[np.float64]:
    return np.sum((coords[rows][:, None, :] - coords[None, :, :]) ** 2, axis=-1)


def iter_pair_distances(cloud: PointCloud, chunk: int = GEOMETRY_CONFIG['knn_chunk_rows']):
    """Yield (rows, distances, off_diagonal) blocks covering all n x n pairs"""
    n = cloud.n
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        dist = np.sqrt(_sq_dist_rows(cloud.coords, rows))
        off_diagonal = np.ones(dist.shape, dtype=bool)
        off_diagonal[np.arange(rows.size), rows] = False
        yield rows, dist, off_diagonal


def knn_support(
    cloud: PointCloud,
    k: int,
    method: str = GEOMETRY_CONFIG['knn_method'],
    symmetric: bool = GEOMETRY_CONFIG['symmetric_support'],
) -> SupportSet:
    """Directed k-nearest-neighbor support; ties broken by smaller index"""
    n = cloud.n
    if k < 1 or k > n - 1:
        raise InvalidKError(f"k must satisfy 1 <= k <= n-1 = {n - 1}, got {k}")

    if method == 'brute':
        neighbors = _knn_brute(cloud.coords, k)
    elif method == 'grid':
        neighbors = _knn_grid(cloud.coords, k)
    else:
        raise ValidationError(f"unknown k-NN method '{method}'")

    support = SupportSet(np.repeat(np.arange(n), k), neighbors.ravel(), n, k)
    logger.debug("built %d-NN support over %d points (%s)", k, n, method)
    return support.symmetrized() if symmetric else support


def _knn_brute(coords, k) -> NDArray[np.int64]:
    n = coords.shape[0]
    chunk = GEOMETRY_CONFIG['knn_chunk_rows']
    neighbors = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        d2 = _sq_dist_rows(coords, rows)
        d2[np.arange(rows.size), rows] = np.inf
        # Stable sort keeps equal distances in index order
        neighbors[rows] = np.argsort(d2, axis=1, kind='stable')[:, :k]
    return neighbors


class _CellGrid:
    """Uniform cell grid over a point set for neighborhood queries."""

    def __init__(self, coords, cell_size):
        self.coords = coords
        self.cell_size = cell_size
        self.origin = coords.min(axis=0)
        cells = np.floor((coords - self.origin) / cell_size).astype(np.int64)
        self.cells = cells
        self.span = int(cells.max()) + 1
        self.buckets: dict[tuple, NDArray[np.int64]] = {}
        order = np.lexsort(cells.T[::-1])
        sorted_cells = cells[order]
        boundaries = np.flatnonzero(np.any(np.diff(sorted_cells, axis=0) != 0, axis=1)) + 1
        for group in np.split(order, boundaries):
            self.buckets[tuple(cells[group[0]].tolist())] = np.sort(group)

    def gather(self, cell, radius) -> NDArray[np.int64]:
        """Indices of points in cells within Chebyshev distance `radius`"""
        found = []
        for offset in itertools.product(range(-radius, radius + 1), repeat=len(cell)):
            members = self.buckets.get(tuple(c + o for c, o in zip(cell, offset)))
            if members is not None:
                found.append(members)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)


def _grid_cell_size(coords, points_per_cell) -> float:
    n, dim = coords.shape
    extent = np.ptp(coords, axis=0)
    extent[extent == 0] = 1.0
    return float((np.prod(extent) * points_per_cell / n) ** (1.0 / dim))


def _knn_grid(coords, k) -> NDArray[np.int64]:
    n = coords.shape[0]
    grid = _CellGrid(coords, _grid_cell_size(coords, GEOMETRY_CONFIG['grid_points_per_cell']))
    neighbors = np.empty((n, k), dtype=np.int64)
    for u in range(n):
        cell = tuple(grid.cells[u].tolist())
        radius = 1
        while True:
            candidates = grid.gather(cell, radius)
            candidates = candidates[candidates != u]
            covers_all = radius >= grid.span
            if candidates.size >= k or covers_all:
                d2 = np.sum((coords[u] - coords[candidates]) ** 2, axis=-1)
                order = np.lexsort((candidates, d2))[:k]
                # Every point within radius * cell_size has been gathered; strict so boundary ties resolve by index
                if covers_all or d2[order[-1]] < (radius * grid.cell_size) ** 2:
                    neighbors[u] = candidates[order]
                    break
            radius += 1
    return neighbors


def radius_support(cloud: PointCloud, s: float) -> SupportSet:
    """All ordered pairs at distance <= s"""
    if s <= 0:
        raise ValidationError(f"support radius must be positive, got {s}")
    coords = cloud.coords
    grid = _CellGrid(coords, s)
    src_parts, dst_parts = [], []
    for cell, members in grid.buckets.items():
        candidates = grid.gather(cell, 1)
        d2 = np.sum((coords[members][:, None, :] - coords[candidates][None, :, :]) ** 2, axis=-1)
        rows, cols = np.nonzero(d2 <= s * s)
        src_parts.append(members[rows])
        dst_parts.append(candidates[cols])
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    keep = src != dst
    return SupportSet(src[keep], dst[keep], cloud.n)


def distance_histogram(cloud: PointCloud, bins: int = GEOMETRY_CONFIG['histogram_bins'], value_range=None) -> DistanceHistogram:
    """Normalized histogram of distances over all ordered pairs u != v"""
    n = cloud.n
    if n < 2:
        raise InsufficientPointsError("distance histogram needs at least 2 points")
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")

    def row_blocks():
        for _, dist, off_diagonal in iter_pair_distances(cloud):
            yield dist[off_diagonal]

    if value_range is None:
        upper = max(float(block.max()) for block in row_blocks())
        value_range = (0.0, upper if upper > 0 else 1.0)
    low, high = float(value_range[0]), float(value_range[1])

    edges = np.histogram_bin_edges([], bins=bins, range=(low, high))
    counts = np.zeros(bins, dtype=np.int64)
    for block in row_blocks():
        # Out-of-range distances fold into the end bins so masses still sum to 1
        counts += np.histogram(np.clip(block, low, high), bins=edges)[0]
    return DistanceHistogram(edges, counts / float(n * (n - 1)))
