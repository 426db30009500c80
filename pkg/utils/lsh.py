"""E2LSH hashing, collision probabilities, AND hash codes and block partitioning.

Hash functions follow h(x) = floor((a.x + b) / r) with a ~ N(0, I) and
b ~ U[0, r). Every function of table i, slot j is drawn from its own seed
derived from (family seed, i, j), so growing m1 or m2 never changes the
functions already drawn.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import erf

from config.settings import LSH_CONFIG, derive_seed
from utils.errors import (
    DimensionMismatchError,
    DomainError,
    EmptyInputError,
    IncompleteCodesError,
    InvalidBucketCountError,
    InvalidTotalError,
    ValidationError,
)

logger = logging.getLogger(__name__)

_SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True, eq=False)
class E2lshFunction:
    """One Euclidean hash function with projection a, offset b and width r."""

    a: NDArray[np.float64]
    b: float
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise DomainError(f"bucket width r must be positive, got {self.r}")
        object.__setattr__(self, 'a', np.asarray(self.a, dtype=np.float64))

    @classmethod
    def sample(cls, dim: int, r: float, seed: int) -> "E2lshFunction":
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(dim)
        return cls(a, float(rng.uniform()) * r, r)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def to_record(self) -> dict:
        """Flat record (a0..a{dim-1}, b, r) for CSV dumps"""
        record = {f'a{i}': float(v) for i, v in enumerate(self.a)}
        record.update({'b': float(self.b), 'r': float(self.r)})
        return record


def _check_dim(a, x) -> None:
    if np.shape(a)[-1] != np.shape(x)[-1]:
        raise DimensionMismatchError(f"hash dimension {np.shape(a)[-1]} != input dimension {np.shape(x)[-1]}")


def e2lsh_bucket(f: E2lshFunction, x):
    """Integer bucket floor((a.x + b) / r); row-wise for a matrix input"""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(f.a, x)
    buckets = np.floor((x @ f.a + f.b) / f.r).astype(np.int64)
    return int(buckets) if buckets.ndim == 0 else buckets


def raw_hash(a, x):
    """Un-bucketized projection a.x"""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dim(a, x)
    value = x @ a
    return float(value) if np.ndim(value) == 0 else value


def collision_prob(z, r: float):
    """Exact E2LSH collision probability p_r(z) for two points at distance z"""
    if not r > 0:
        raise DomainError(f"bucket width r must be positive, got {r}")
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0):
        raise DomainError("distance z must be nonnegative")

    prob = np.ones_like(z_arr)
    positive = z_arr > 0
    u = r / (math.sqrt(2.0) * z_arr[positive])
    closed = erf(u) + np.expm1(-u ** 2) / (u * _SQRT_PI)
    # Far pairs: the two terms cancel, switch to the series in u
    series = (u - u ** 3 / 6.0 + u ** 5 / 30.0 - u ** 7 / 168.0) / _SQRT_PI
    prob[positive] = np.where(u < 0.05, series, closed)
    return float(prob) if prob.ndim == 0 else prob


def collision_prob_bounds(z, r: float):
    """Piecewise lower/upper bounds on p_r(z) (separate branches for z < r and z >= r)"""
    if not r > 0:
        raise DomainError(f"bucket width r must be positive, got {r}")
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0):
        raise DomainError("distance z must be nonnegative")

    ratio = z_arr / r
    near = ratio < 1.0
    with np.errstate(divide='ignore'):
        inverse = np.where(near, 0.0, 1.0 / np.where(near, 1.0, ratio))
    lower = np.where(near, 1.0 - math.sqrt(2.0 / math.pi) * ratio, math.sqrt(2.0) / (3.0 * _SQRT_PI) * inverse)
    upper = np.where(near, 1.0 - math.sqrt(1.0 / (2.0 * math.pi)) * ratio, inverse / math.sqrt(2.0 * math.pi))
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def collision_prob_expected(distances, r: float, m2: int = 1) -> float:
    """Mean AND-collision probability p_r(z)^m2 over a set of pair distances"""
    return float(np.mean(collision_prob(np.asarray(distances), r) ** m2))


def equal_count_bucketize(values, B: float) -> NDArray[np.int64]:
    """1-based bucket index of each value after sorting into equal-count runs"""
    if B < 1:
        raise InvalidBucketCountError(f"bucket count must be >= 1, got {B}")
    values = np.asarray(values, dtype=np.float64).ravel()
    total = values.size
    if total == 0:
        raise EmptyInputError("nothing to bucketize")

    positions = np.arange(total)
    order = np.lexsort((positions, values))
    if float(B).is_integer():
        # Every floor(N/B) consecutive values share an index; the remainder joins the last bucket
        step = max(total // int(B), 1)
        by_position = np.minimum(positions // step, int(B) - 1) + 1
    else:
        cuts = np.floor(total * np.arange(1, math.ceil(B)) / B).astype(np.int64)
        by_position = np.searchsorted(cuts, positions, side='right') + 1

    # Identical values always share the index of the first position they occupy
    sorted_values = values[order]
    run_start = np.ones(total, dtype=bool)
    run_start[1:] = sorted_values[1:] != sorted_values[:-1]
    first_position = np.maximum.accumulate(np.where(run_start, positions, 0))

    indices = np.empty(total, dtype=np.int64)
    indices[order] = by_position[first_position]
    return indices


def realized_bucket_counts(B) -> list[int]:
    """Number of distinct indices equal_count_bucketize can emit for each B"""
    return [int(math.ceil(b)) for b in B]


def and_hash_codes(base, aux, B, delta: float | None = None) -> NDArray[np.float64]:
    """Combine base codes and aux bucket tuples into one AND hash code per item"""
    base = np.asarray(base, dtype=np.float64).ravel()
    B = list(B)
    aux = np.asarray(aux, dtype=np.float64) if len(B) else np.zeros((base.size, 0))
    if aux.ndim == 1:
        aux = aux[:, None]
    if aux.shape != (base.size, len(B)):
        raise IncompleteCodesError(f"expected aux codes of shape {(base.size, len(B))}, got {aux.shape}")
    if np.any(~np.isfinite(aux)) or np.any(aux < 1):
        raise IncompleteCodesError("aux codes must be complete 1-based bucket indices")
    if not len(B):
        return base.copy()

    if delta is None:
        delta = float(base.max() - base.min())
    if delta <= 0:
        delta = 1.0

    # Range multipliers use realized bucket counts so non-integer B keep ranges disjoint
    multipliers = np.cumprod([1] + realized_bucket_counts(B)[:-1]).astype(np.float64)
    offsets = (aux - 1.0) @ multipliers
    return base + delta * offsets


def random_bucket_counts(G: float, count: int, seed: int) -> list[float]:
    """Positive bucket counts whose product is G, resampled per seed"""
    if G < 1:
        raise InvalidTotalError(f"total bucket count must be >= 1, got {G}")
    if count < 0:
        raise ValidationError(f"bucket-count length must be >= 0, got {count}")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(count, LSH_CONFIG['bucket_split_concentration']))
    return [float(b) for b in np.exp(weights * math.log(G))]


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """Items sorted by code and cut into consecutive equal-size blocks."""

    order: NDArray[np.int64]
    block_of: NDArray[np.int64]
    block_size: int

    @property
    def n_blocks(self) -> int:
        return int(math.ceil(self.order.size / self.block_size))

    def sizes(self) -> NDArray[np.int64]:
        return np.bincount(self.block_of, minlength=self.n_blocks)


def equal_size_blocks(T, block_size: int) -> BlockPartition:
    """Sort by T (ties by index) and give every block_size consecutive items one block"""
    if block_size < 1:
        raise ValidationError(f"block size must be >= 1, got {block_size}")
    T = np.asarray(T, dtype=np.float64).ravel()
    order = np.lexsort((np.arange(T.size), T))
    block_of = np.empty(T.size, dtype=np.int64)
    block_of[order] = np.arange(T.size) // block_size
    return BlockPartition(order, block_of, int(block_size))


@dataclass(frozen=True, eq=False)
class CollisionTables:
    """Per-table bucket labels; items with equal labels in table i collide there."""

    labels: NDArray[np.int64]

    @property
    def m1(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.labels.shape[1]

    def prefix(self, m1: int) -> "CollisionTables":
        return CollisionTables(self.labels[:m1])

    def table_hits(self, src, dst) -> NDArray[np.bool_]:
        """(m1, pairs) mask of per-table collisions for aligned index arrays"""
        return self.labels[:, np.asarray(src)] == self.labels[:, np.asarray(dst)]

    def collided(self, src, dst) -> NDArray[np.bool_]:
        """OR over tables"""
        return self.table_hits(src, dst).any(axis=0)

    def collision_counts(self) -> list[int]:
        """Unordered colliding pairs per table, sum over buckets of C(n_b, 2)"""
        counts = []
        for row in self.labels:
            sizes = np.bincount(row).astype(np.int64)
            counts.append(int(np.sum(sizes * (sizes - 1) // 2)))
        return counts

    def pair_set(self, table: int) -> set[tuple[int, int]]:
        """Ordered colliding pairs (u, v), u != v, of one table"""
        src, dst = self._ordered_pairs(self.labels[table])
        return set(zip(src.tolist(), dst.tolist()))

    def union_pair_keys(self) -> NDArray[np.int64]:
        """Encoded u * n + v of every ordered pair colliding in any table"""
        keys = [src * self.n + dst for src, dst in (self._ordered_pairs(row) for row in self.labels)]
        return np.unique(np.concatenate(keys)) if keys else np.empty(0, dtype=np.int64)

    @staticmethod
    def _ordered_pairs(row):
        order = np.argsort(row, kind='stable')
        boundaries = np.flatnonzero(np.diff(row[order])) + 1
        src_parts, dst_parts = [np.empty(0, dtype=np.int64)], [np.empty(0, dtype=np.int64)]
        for members in np.split(order, boundaries):
            if members.size < 2:
                continue
            u, v = np.meshgrid(members, members, indexing='ij')
            off = u != v
            src_parts.append(u[off])
            dst_parts.append(v[off])
        return np.concatenate(src_parts), np.concatenate(dst_parts)


@dataclass(frozen=True, eq=False)
class HashProjections:
    """Raw projections a_ij . x of n items for m1 tables x m2 functions."""

    raw: NDArray[np.float64]          # (m1, m2, n)
    unit_offsets: NDArray[np.float64]  # (m1, m2), b = unit_offset * r

    def bucketize(self, r: float, m1: int | None = None, m2: int | None = None) -> NDArray[np.int64]:
        if not r > 0:
            raise DomainError(f"bucket width r must be positive, got {r}")
        raw = self.raw[:m1, :m2]
        offsets = self.unit_offsets[:m1, :m2, None] * r
        return np.floor((raw + offsets) / r).astype(np.int64)

    def collision_tables(self, r: float, m1: int | None = None, m2: int | None = None) -> CollisionTables:
        codes = self.bucketize(r, m1, m2)
        labels = np.empty((codes.shape[0], codes.shape[2]), dtype=np.int64)
        for table, table_codes in enumerate(codes):
            _, inverse = np.unique(table_codes.T, axis=0, return_inverse=True)
            labels[table] = inverse.reshape(-1)
        return CollisionTables(labels)


class E2lshFamily:
    """Seeded source of E2LSH functions indexed by (table, slot)."""

    def __init__(self, dim: int, seed: int):
        self.dim = dim
        self.seed = seed

    def _draw(self, table: int, slot: int):
        rng = np.random.default_rng(derive_seed(self.seed, table, slot))
        return rng.standard_normal(self.dim), float(rng.uniform())

    def function(self, table: int, slot: int, r: float) -> E2lshFunction:
        a, unit = self._draw(table, slot)
        return E2lshFunction(a, unit * r, r)

    def projections(self, items, m1: int, m2: int) -> HashProjections:
        items = np.asarray(items, dtype=np.float64)
        if items.ndim != 2 or items.shape[1] != self.dim:
            raise DimensionMismatchError(f"family expects {self.dim}-dim items, got shape {items.shape}")
        raw = np.empty((m1, m2, items.shape[0]))
        unit_offsets = np.empty((m1, m2))
        # One product per function keeps each row independent of m1 and m2
        for table in range(m1):
            for slot in range(m2):
                a, unit_offsets[table, slot] = self._draw(table, slot)
                raw[table, slot] = items @ a
        return HashProjections(raw, unit_offsets)


def lsh_collision_tables(items, m1: int, m2: int, r: float, seed: int) -> CollisionTables:
    """m1 tables of m2 concatenated E2LSH functions over the given items"""
    if m1 < 1 or m2 < 1:
        raise ValidationError(f"need m1 >= 1 and m2 >= 1, got m1={m1}, m2={m2}")
    if not r > 0:
        raise DomainError(f"bucket width r must be positive, got {r}")
    items = np.asarray(items, dtype=np.float64)
    family = E2lshFamily(items.shape[1], seed)
    tables = family.projections(items, m1, m2).collision_tables(r)
    logger.debug("hashed %d items into %d tables x %d functions (r=%g)", items.shape[0], m1, m2, r)
    return tables


def collision_rate_mc(z: float, r: float, trials: int, seed: int, dim: int = 2):
    """Monte-Carlo collision frequency of two points at distance z and its binomial stderr"""
    if trials < 1:
        raise ValidationError(f"need at least one trial, got {trials}")
    if not r > 0:
        raise DomainError(f"bucket width r must be positive, got {r}")
    if z < 0:
        raise DomainError("distance z must be nonnegative")
    rng = np.random.default_rng(seed)
    # Only the projection onto the separating axis matters: x = 0, y = z e_1
    a = rng.standard_normal((trials, dim))
    b = rng.uniform(0.0, r, size=trials)
    collided = np.floor(b / r) == np.floor((a[:, 0] * z + b) / r)
    rate = float(collided.mean())
    return rate, math.sqrt(rate * (1.0 - rate) / trials)
