"""HEPT attention forward pass, the dense oracle and a small transformer stack.

Attention weights use the distance kernel A_uv = exp(-||q_u - k_v||^2 / 2)
on q = [H W_Q || sqrt(2 omega) rho] and k = [H W_K || sqrt(2 omega) rho].
HEPT approximates A V by m1 block-diagonal products: per table, queries and
keys are sorted by their AND hash codes, cut into equal-size blocks, and
only same-index blocks interact. Numerators and denominators of all tables
are summed in table order before the final division.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import erf

from config.settings import ATTENTION_CONFIG, SEED_STREAMS, derive_seed
from utils.errors import (
    DegenerateInputError,
    DomainError,
    EmptyInputError,
    InvalidTotalError,
    OracleCapError,
    ShapeMismatchError,
    ValidationError,
)
from utils.kernels import HeptKernelParams, hept_concat
from utils.lsh import and_hash_codes, equal_count_bucketize, equal_size_blocks, random_bucket_counts, raw_hash

logger = logging.getLogger(__name__)

_DENSE_CHUNK_ROWS = 64


@dataclass(eq=False)
class AttnInputs:
    """Hidden states, coordinates and projections of one attention head."""

    H: NDArray[np.float64]
    rho: NDArray[np.float64]
    W_Q: NDArray[np.float64]
    W_K: NDArray[np.float64]
    W_V: NDArray[np.float64]
    omega: float = ATTENTION_CONFIG['omega']

    def __post_init__(self) -> None:
        for name in ('H', 'rho', 'W_Q', 'W_K', 'W_V'):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.ndim != 2:
                raise ShapeMismatchError(f"{name} must be a matrix, got shape {value.shape}")
            if not np.all(np.isfinite(value)):
                raise DomainError(f"{name} contains non-finite values")
            setattr(self, name, value)
        n, h = self.H.shape
        if n < 1:
            raise EmptyInputError("attention needs at least one point")
        if self.rho.shape[0] != n:
            raise ShapeMismatchError(f"rho has {self.rho.shape[0]} rows, H has {n}")
        if self.W_Q.shape != self.W_K.shape or self.W_Q.shape[0] != h or self.W_V.shape[0] != h:
            raise ShapeMismatchError(
                f"projections {self.W_Q.shape}, {self.W_K.shape}, {self.W_V.shape} do not fit hidden size {h}")
        self.omega = HeptKernelParams(self.omega).omega

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class HeptAttnConfig:
    tables: int = ATTENTION_CONFIG['tables']
    coord_hashes: int = ATTENTION_CONFIG['coord_hashes']
    total_buckets: float = ATTENTION_CONFIG['total_buckets']
    block_size: int = ATTENTION_CONFIG['block_size']
    heads: int = ATTENTION_CONFIG['heads']
    seed: int = 0
    qk_aux_hashes: int = ATTENTION_CONFIG['qk_aux_hashes']

    def __post_init__(self) -> None:
        if self.tables < 1:
            raise ValidationError(f"need at least one hash table, got {self.tables}")
        if self.coord_hashes < 0 or self.qk_aux_hashes < 0:
            raise ValidationError("aux hash counts must be nonnegative")
        if self.total_buckets < 1:
            raise InvalidTotalError(f"total bucket count G must be >= 1, got {self.total_buckets}")
        if self.block_size < 1:
            raise ValidationError(f"block size must be >= 1, got {self.block_size}")
        if self.heads < 1:
            raise ValidationError(f"need at least one head, got {self.heads}")

    @property
    def aux_hashes(self) -> int:
        return self.coord_hashes + self.qk_aux_hashes


@dataclass(eq=False)
class AttnOutput:
    """Embeddings plus per-table diagnostics.

    ``query_blocks`` / ``key_blocks`` hold each table's block index per point
    (None for the dense oracle); ``weights`` is the normalized dense matrix
    and is only kept by the oracle.
    """

    E: NDArray[np.float64]
    collision_counts: list[int] = field(default_factory=list)
    flagged_rows: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    query_blocks: NDArray[np.int64] | None = None
    key_blocks: NDArray[np.int64] | None = None
    weights: NDArray[np.float64] | None = None

    def diagnostics(self) -> dict:
        return {
            'collision_counts': [int(c) for c in self.collision_counts],
            'flagged_rows': [int(u) for u in self.flagged_rows],
            'n_flagged': int(self.flagged_rows.size),
        }


@dataclass(frozen=True, eq=False)
class CoordinateAux:
    """Shared coordinate bucket indices of one table: codes (n, d') and bucket counts B."""

    codes: NDArray[np.int64]
    B: list[float]


def build_qk(inputs: AttnInputs):
    """Q = [H W_Q || sqrt(2 omega) rho], K likewise with W_K, V = H W_V"""
    Q = hept_concat(inputs.H @ inputs.W_Q, inputs.rho, inputs.omega)
    K = hept_concat(inputs.H @ inputs.W_K, inputs.rho, inputs.omega)
    return Q, K, inputs.H @ inputs.W_V


def _sq_distances(Q, K) -> NDArray[np.float64]:
    """||q - k||^2 over the last two axes, batched over leading ones"""
    diff = Q[..., :, None, :] - K[..., None, :, :]
    return np.sum(diff * diff, axis=-1)


def _check_qkv(Q, K, V):
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    if Q.ndim != 2 or Q.shape != K.shape or V.ndim != 2 or V.shape[0] != Q.shape[0]:
        raise ShapeMismatchError(f"incompatible shapes Q {Q.shape}, K {K.shape}, V {V.shape}")
    if Q.shape[0] < 1:
        raise EmptyInputError("attention needs at least one point")
    return Q, K, V


def dense_attention(Q, K, V, cap: int | None = ATTENTION_CONFIG['dense_cap']) -> AttnOutput:
    """Exact E = D^-1 A V over all pairs, self-pairs included"""
    Q, K, V = _check_qkv(Q, K, V)
    n = Q.shape[0]
    if cap is not None and n > cap:
        raise OracleCapError(f"dense oracle is capped at n = {cap}, got n = {n}")

    weights = np.empty((n, n))
    for start in range(0, n, _DENSE_CHUNK_ROWS):
        rows = slice(start, min(start + _DENSE_CHUNK_ROWS, n))
        sq = _sq_distances(Q[rows], K)
        # Row shift cancels in the normalization and keeps far rows from underflowing
        block = np.exp(-0.5 * (sq - sq.min(axis=1, keepdims=True)))
        weights[rows] = block / block.sum(axis=1, keepdims=True)
    return AttnOutput(weights @ V, collision_counts=[n * n], weights=weights)


def coordinate_aux_codes(rho, config: HeptAttnConfig, seed: int) -> list[CoordinateAux]:
    """Per table, d' coordinate hashes bucketized over the 2n query+key values.

    Queries and keys share rho, so every point gets the same aux tuple on
    both sides. The result depends only on rho and seed and is reused by
    every head.
    """
    rho = np.asarray(rho, dtype=np.float64)
    n = rho.shape[0]
    aux = []
    for table in range(config.tables):
        table_seed = derive_seed(seed, SEED_STREAMS['attention'], 1, table)
        B = random_bucket_counts(config.total_buckets, config.aux_hashes, derive_seed(table_seed, 0))
        rng = np.random.default_rng(derive_seed(table_seed, 1))
        codes = np.empty((n, config.coord_hashes), dtype=np.int64)
        for slot in range(config.coord_hashes):
            projected = raw_hash(rng.standard_normal(rho.shape[1]), rho)
            both_sides = equal_count_bucketize(np.concatenate([projected, projected]), B[slot])
            codes[:, slot] = both_sides[:n]
        aux.append(CoordinateAux(codes, B))
    return aux


def hept_hash_codes(Q, K, rho, config: HeptAttnConfig, aux: list[CoordinateAux] | None = None, head: int = 0):
    """Per table, the AND hash codes (T_q, T_k) of queries and keys"""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    n = Q.shape[0]
    if aux is None:
        aux = coordinate_aux_codes(rho, config, config.seed)
    if len(aux) != config.tables:
        raise ShapeMismatchError(f"got aux codes for {len(aux)} tables, config has {config.tables}")

    codes = []
    for table, table_aux in enumerate(aux):
        rng = np.random.default_rng(derive_seed(config.seed, SEED_STREAMS['attention'], 0, head, table))
        direction = rng.standard_normal(Q.shape[1])
        base_q, base_k = raw_hash(direction, Q), raw_hash(direction, K)
        base_both = np.concatenate([base_q, base_k])
        delta = float(base_both.max() - base_both.min())

        aux_q, aux_k = table_aux.codes, table_aux.codes
        if config.qk_aux_hashes:
            # Ablation: extra aux hashes from q and k themselves, bucketized jointly over 2n values
            extra_q = np.empty((n, config.qk_aux_hashes), dtype=np.int64)
            extra_k = np.empty_like(extra_q)
            for slot in range(config.qk_aux_hashes):
                a = rng.standard_normal(Q.shape[1])
                joint = equal_count_bucketize(np.concatenate([raw_hash(a, Q), raw_hash(a, K)]),
                                              table_aux.B[config.coord_hashes + slot])
                extra_q[:, slot], extra_k[:, slot] = joint[:n], joint[n:]
            aux_q = np.hstack([aux_q, extra_q])
            aux_k = np.hstack([aux_k, extra_k])

        codes.append((and_hash_codes(base_q, aux_q, table_aux.B, delta),
                      and_hash_codes(base_k, aux_k, table_aux.B, delta)))
    return codes


def _block_pass(Q, K, V, q_part, k_part, block_size):
    """One table's block-diagonal numerator and denominator, scaled by exp(-row_max).

    Returns (numerator, denominator, row_max, pairs); row_max is each query's
    largest log-score in its block, -inf when no key shares the block.
    """
    n = Q.shape[0]
    n_blocks = q_part.n_blocks
    pad = n_blocks * block_size - n
    # Final partial block is padded with masked slots that contribute exact zeros
    q_index = np.concatenate([q_part.order, np.full(pad, -1)]).reshape(n_blocks, block_size)
    k_index = np.concatenate([k_part.order, np.full(pad, -1)]).reshape(n_blocks, block_size)
    q_valid, k_valid = q_index >= 0, k_index >= 0

    Qb = Q[np.where(q_valid, q_index, 0)]
    Kb = K[np.where(k_valid, k_index, 0)]
    Vb = V[np.where(k_valid, k_index, 0)]
    sq = np.where(k_valid[:, None, :], _sq_distances(Qb, Kb), np.inf)
    row_min = sq.min(axis=-1, keepdims=True)
    weights = np.exp(-0.5 * (sq - np.where(np.isfinite(row_min), row_min, 0.0)))

    numerator = np.zeros((n, V.shape[1]))
    denominator = np.zeros(n)
    row_max = np.full(n, -np.inf)
    placed = q_index[q_valid]
    numerator[placed] = (weights @ Vb)[q_valid]
    denominator[placed] = weights.sum(axis=-1)[q_valid]
    row_max[placed] = -0.5 * row_min[..., 0][q_valid]
    pairs = int(np.sum(q_valid.sum(axis=1) * k_valid.sum(axis=1)))
    return numerator, denominator, row_max, pairs


def _merge_scaled(numerator, denominator, row_max, table_num, table_den, table_max):
    """Add one table into running sums kept relative to the running row max"""
    merged_max = np.maximum(row_max, table_max)
    reference = np.where(np.isfinite(merged_max), merged_max, 0.0)
    old_scale = np.exp(row_max - reference)
    new_scale = np.exp(table_max - reference)
    numerator = numerator * old_scale[:, None] + table_num * new_scale[:, None]
    denominator = denominator * old_scale + table_den * new_scale
    return numerator, denominator, merged_max


def _normalize(numerator, denominator):
    """E = numerator / denominator; rows with a zero denominator are flagged and zeroed"""
    flagged = np.flatnonzero(denominator == 0)
    if flagged.size:
        logger.warning("%d queries share no block with any key; their rows are zero", flagged.size)
    safe = np.where(denominator == 0, 1.0, denominator)
    E = numerator / safe[:, None]
    E[flagged] = 0.0
    return E, flagged


def hept_attention(Q, K, V, rho, config: HeptAttnConfig, aux: list[CoordinateAux] | None = None,
                   head: int = 0) -> AttnOutput:
    """Sum of m1 block-diagonal products, normalized once after all tables.

    Sums are kept relative to each row's running max log-score, so far
    query-key pairs never underflow the whole row.
    """
    Q, K, V = _check_qkv(Q, K, V)
    n = Q.shape[0]
    codes = hept_hash_codes(Q, K, rho, config, aux=aux, head=head)

    numerator = np.zeros((n, V.shape[1]))
    denominator = np.zeros(n)
    row_max = np.full(n, -np.inf)
    query_blocks = np.empty((config.tables, n), dtype=np.int64)
    key_blocks = np.empty_like(query_blocks)
    counts = []
    for table, (T_q, T_k) in enumerate(codes):
        q_part = equal_size_blocks(T_q, config.block_size)
        k_part = equal_size_blocks(T_k, config.block_size)
        table_num, table_den, table_max, pairs = _block_pass(Q, K, V, q_part, k_part, config.block_size)
        numerator, denominator, row_max = _merge_scaled(numerator, denominator, row_max,
                                                        table_num, table_den, table_max)
        query_blocks[table], key_blocks[table] = q_part.block_of, k_part.block_of
        counts.append(pairs)
        logger.debug("table %d: %d query-key pairs evaluated", table, pairs)

    E, flagged = _normalize(numerator, denominator)
    return AttnOutput(E, counts, flagged, query_blocks, key_blocks)


def attention_error(approx: AttnOutput, exact: AttnOutput):
    """(relative Frobenius error, captured mass); mass is None without blocks and oracle weights"""
    if approx.E.shape != exact.E.shape:
        raise ShapeMismatchError(f"output shapes differ: {approx.E.shape} vs {exact.E.shape}")
    norm = float(np.linalg.norm(exact.E))
    if norm == 0:
        raise DegenerateInputError("exact output has zero norm")
    error = float(np.linalg.norm(approx.E - exact.E)) / norm

    if approx.query_blocks is None or exact.weights is None:
        return error, None
    covered = np.zeros(exact.weights.shape, dtype=bool)
    for q_blocks, k_blocks in zip(approx.query_blocks, approx.key_blocks):
        covered |= q_blocks[:, None] == k_blocks[None, :]
    mass = float(np.sum(exact.weights[covered])) / exact.weights.shape[0]
    return error, min(max(mass, 0.0), 1.0)


def layer_norm(X, eps: float = ATTENTION_CONFIG['ln_eps']) -> NDArray[np.float64]:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    return (X - mean) / np.sqrt(var + eps)


def gelu(X) -> NDArray[np.float64]:
    X = np.asarray(X, dtype=np.float64)
    return 0.5 * X * (1.0 + erf(X / math.sqrt(2.0)))


@dataclass(eq=False)
class TransformerParams:
    """Weights of one pre-LN block: attention projections and a two-layer FFN."""

    W_Q: NDArray[np.float64]
    W_K: NDArray[np.float64]
    W_V: NDArray[np.float64]
    W_O: NDArray[np.float64]
    W_1: NDArray[np.float64]
    b_1: NDArray[np.float64]
    W_2: NDArray[np.float64]
    b_2: NDArray[np.float64]

    @property
    def hidden(self) -> int:
        return self.W_Q.shape[0]

    @classmethod
    def random(cls, hidden: int = ATTENTION_CONFIG['hidden'], ffn: int = ATTENTION_CONFIG['ffn_width'],
               seed: int = 0) -> "TransformerParams":
        """Gaussian weights with 1/sqrt(fan_in) scale, zero biases"""
        rng = np.random.default_rng(derive_seed(seed, SEED_STREAMS['transformer']))

        def dense(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)

        return cls(dense(hidden, hidden), dense(hidden, hidden), dense(hidden, hidden), dense(hidden, hidden),
                   dense(hidden, ffn), np.zeros(ffn), dense(ffn, hidden), np.zeros(hidden))

    @classmethod
    def zeros(cls, hidden: int = ATTENTION_CONFIG['hidden'], ffn: int = ATTENTION_CONFIG['ffn_width']):
        square = np.zeros((hidden, hidden))
        return cls(square, square, square, square, np.zeros((hidden, ffn)), np.zeros(ffn),
                   np.zeros((ffn, hidden)), np.zeros(hidden))


def multi_head_attention(X, rho, params: TransformerParams, config: HeptAttnConfig,
                         aux: list[CoordinateAux] | None = None, omega: float = ATTENTION_CONFIG['omega'],
                         dense: bool = False) -> NDArray[np.float64]:
    """Per-head attention on slices of the projections, concatenated and mixed by W_O"""
    hidden = X.shape[1]
    if hidden % config.heads:
        raise ShapeMismatchError(f"{config.heads} heads do not divide hidden size {hidden}")
    width = hidden // config.heads
    if aux is None and not dense:
        aux = coordinate_aux_codes(rho, config, config.seed)

    outputs = []
    for head in range(config.heads):
        cols = slice(head * width, (head + 1) * width)
        inputs = AttnInputs(X, rho, params.W_Q[:, cols], params.W_K[:, cols], params.W_V[:, cols], omega)
        Q, K, V = build_qk(inputs)
        result = dense_attention(Q, K, V, cap=None) if dense else hept_attention(Q, K, V, rho, config, aux, head)
        outputs.append(result.E)
    return np.hstack(outputs) @ params.W_O


def transformer_block(H, rho, params: TransformerParams, config: HeptAttnConfig,
                      aux: list[CoordinateAux] | None = None, omega: float = ATTENTION_CONFIG['omega'],
                      dense: bool = False) -> NDArray[np.float64]:
    """H' = H + MHSA(LN H), H'' = H' + FFN(LN H')"""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[1] != params.hidden:
        raise ShapeMismatchError(f"hidden size {H.shape[1]} does not match parameters ({params.hidden})")
    attended = H + multi_head_attention(layer_norm(H), rho, params, config, aux, omega, dense)
    hidden = gelu(layer_norm(attended) @ params.W_1 + params.b_1)
    return attended + hidden @ params.W_2 + params.b_2


def transformer_forward(H, rho, layers: list[TransformerParams], config: HeptAttnConfig,
                        omega: float = ATTENTION_CONFIG['omega'], dense: bool = False) -> NDArray[np.float64]:
    """Stack of blocks sharing one set of coordinate aux codes"""
    aux = None if dense else coordinate_aux_codes(rho, config, config.seed)
    for params in layers:
        H = transformer_block(H, rho, params, config, aux, omega, dense)
    return H
