"""Multi-level nearest-neighbor assignment and level aggregation.

The code vector is split into N contiguous levels. Level l carries weight

    w(l) = (exp(-alpha*l) - exp(-alpha*N)) / sum_{j=1..N-1} (exp(-alpha*j) - exp(-alpha*N))

for 1 <= l <= N-1 and w(N) = 0 exactly; weights sum to 1 and strictly
decrease, so the levels with w(l) >= sigma are always a prefix. Those prefix
dims form the "high" slice, the rest the "low" slice, and the assignment
distance is

    d(e, c) = ||e_low - c_low||_2 + beta * ||e_high - c_high||_2

with plain (non-squared) norms. The two-term form is kept literally: under
beta-weighting it is not order-equivalent to squared distances, so no
squared-distance shortcut is taken anywhere on the assignment path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .errors import ConfigError, DataFormatError
from .state import FeatureBatch, QuantizationResult, validate_batch

# Weight floor applied to the last level in linear aggregation, which would
# otherwise be deleted entirely by its exact-zero weight.
LINEAR_FLOOR = 1e-6


@dataclass(frozen=True)
class LevelWeights:
    w: np.ndarray  # (N,) float64, w[-1] == 0.0 exactly

    @property
    def num_levels(self) -> int:
        return self.w.shape[0]

    def high_mask(self, sigma: float) -> np.ndarray:
        return self.w >= sigma


def compute_level_weights(alpha: float, num_levels: int) -> LevelWeights:
    """Evaluate the decreasing level-weight schedule; the last level gets 0."""
    if not alpha > 0:
        raise ConfigError("alpha range: must be > 0")
    if num_levels < 2:
        raise ConfigError("num_levels range: integer >= 2 required")
    l = np.arange(1, num_levels, dtype=np.float64)
    raw = np.exp(-alpha * l) - np.exp(-alpha * num_levels)
    w = np.zeros(num_levels)
    w[:-1] = raw / raw.sum()
    return LevelWeights(w)


def high_split(weights: LevelWeights, sigma: float, level_dims: tuple[int, ...]) -> int:
    """Number of leading dims whose level weight is >= sigma."""
    mask = weights.high_mask(sigma)
    # strictly decreasing weights guarantee the high levels are a prefix
    n_high = int(mask.sum())
    assert not mask[n_high:].any()
    return int(sum(level_dims[:n_high]))


def multi_level_distance(e: np.ndarray, c: np.ndarray, beta: float, split: int) -> float:
    """Two-term distance between a single feature and a single code vector."""
    e = np.asarray(e, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if e.shape != c.shape or e.ndim != 1:
        raise DataFormatError("multi_level_distance expects two equal-length vectors")
    diff = e - c
    low = np.sqrt((diff[split:] ** 2).sum())
    high = np.sqrt((diff[:split] ** 2).sum())
    return float(low + beta * high)


def distance_matrix(flat_features: np.ndarray, entries: np.ndarray,
                    beta: float, split: int) -> np.ndarray:
    """(M, K) multi-level distances between every feature and every entry."""
    diff = flat_features[:, None, :] - entries[None, :, :]
    sq = diff * diff
    low = np.sqrt(sq[..., split:].sum(axis=-1))
    high = np.sqrt(sq[..., :split].sum(axis=-1))
    return low + beta * high


def quantize(batch: FeatureBatch, entries: np.ndarray, config: EngineConfig,
             weights: LevelWeights | None = None,
             dist: np.ndarray | None = None) -> QuantizationResult:
    """Assign every batch position to its nearest entry.

    Ties break toward the lowest entry index. The codebook and commitment
    losses are the same mean squared full-vector error; which side of the
    quantization boundary is treated as constant under differentiation
    (stop-gradient) is a contract for host training frameworks, not a value
    difference here.
    """
    validate_batch(batch, config)
    if weights is None:
        weights = compute_level_weights(config.alpha, config.num_levels)
    split = high_split(weights, config.sigma, config.level_dims)
    flat = batch.flat_features()
    if dist is None:
        dist = distance_matrix(flat, entries, config.beta, split)
    indices = np.argmin(dist, axis=1)
    min_d = dist[np.arange(flat.shape[0]), indices]
    quantized = entries[indices]
    sq_err = ((flat - quantized) ** 2).sum(axis=1)
    codebook_loss = float(sq_err.mean())
    shape = batch.labels.shape
    aggregated = aggregate(quantized, config.aggregation_mode, weights,
                           config.sigma, config.level_dims)
    return QuantizationResult(
        indices=indices.reshape(shape),
        min_distance=min_d.reshape(shape),
        quantized=quantized.reshape(*shape, -1),
        aggregated=aggregated.reshape(*shape, -1),
        codebook_loss=codebook_loss,
        commit_loss=config.gamma_commit * codebook_loss,
    )


def _level_views(vectors: np.ndarray, level_dims: tuple[int, ...]) -> list[np.ndarray]:
    out, start = [], 0
    for d in level_dims:
        out.append(vectors[..., start:start + d])
        start += d
    return out


def aggregate(vectors: np.ndarray, mode: str, weights: LevelWeights,
              sigma: float, level_dims: tuple[int, ...]) -> np.ndarray:
    """Merge per-level slices of (..., D) vectors into one output vector.

    concat keeps the full vector; low_only/high_only concatenate the levels
    on their side of the sigma threshold; linear is a weighted sum with a
    small floor on the last level's zero weight; cross_attention uses the
    last (lowest) level as the query against the other levels, with no
    learned parameters. linear and cross_attention require equal level dims.
    """
    if mode == "concat":
        return vectors.copy()
    levels = _level_views(vectors, level_dims)
    mask = weights.high_mask(sigma)
    if mode == "low_only":
        chosen = [lv for lv, hi in zip(levels, mask) if not hi]
        if not chosen:
            raise ConfigError("low_only aggregation selected no levels")
        return np.concatenate(chosen, axis=-1)
    if mode == "high_only":
        chosen = [lv for lv, hi in zip(levels, mask) if hi]
        if not chosen:
            raise ConfigError("high_only aggregation selected no levels")
        return np.concatenate(chosen, axis=-1)
    if len(set(level_dims)) != 1:
        raise ConfigError(f"{mode} aggregation requires equal level dims")
    stacked = np.stack(levels, axis=-2)  # (..., N, d)
    if mode == "linear":
        w = weights.w.copy()
        w[-1] = max(w[-1], LINEAR_FLOOR)
        w = w / w.sum()
        return (stacked * w[:, None]).sum(axis=-2)
    if mode == "cross_attention":
        d = level_dims[0]
        query = stacked[..., -1, :]
        keys = stacked[..., :-1, :]
        scores = (keys * query[..., None, :]).sum(axis=-1) / np.sqrt(d)
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        return (keys * attn[..., None]).sum(axis=-2)
    raise ConfigError(f"aggregation_mode: unknown mode {mode!r}")
