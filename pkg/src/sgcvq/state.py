"""Shared domain types: codebook, feature batches, trackers, results.

These are plain value types. They are safe to share read-only across
threads; any mutation requires exclusive access (single-writer contract).
The Codebook is only ever mutated through commit(), which bumps the version
counter, so version strictly increases with each mutation and never
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import UNLABELED, EngineConfig
from .errors import DataFormatError


@dataclass
class Codebook:
    entries: np.ndarray       # (K, D) float64
    entry_class: np.ndarray   # (K,) int32; UNLABELED where no class mass yet
    version: int = 0

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def commit(self, entries: np.ndarray | None = None,
               entry_class: np.ndarray | None = None) -> None:
        """Apply one mutation; the single version-bumping path."""
        if entries is not None:
            if not np.all(np.isfinite(entries)):
                raise DataFormatError("codebook entries must stay finite")
            self.entries = entries
        if entry_class is not None:
            self.entry_class = np.asarray(entry_class, dtype=np.int32)
        self.version += 1

    def copy(self) -> "Codebook":
        return Codebook(self.entries.copy(), self.entry_class.copy(), self.version)


@dataclass
class UsageTracker:
    ema_usage: np.ndarray   # (K,) float64, EMA of per-entry batch hit share
    class_hist: np.ndarray  # (K, C) float64, EMA-decayed per-class hit mass
    raw_hits: np.ndarray    # (K, C) uint64, lifetime undecayed hit counts

    @classmethod
    def zeros(cls, codebook_size: int, num_classes: int) -> "UsageTracker":
        return cls(
            ema_usage=np.zeros(codebook_size),
            class_hist=np.zeros((codebook_size, num_classes)),
            raw_hits=np.zeros((codebook_size, num_classes), dtype=np.uint64),
        )

    def copy(self) -> "UsageTracker":
        return UsageTracker(self.ema_usage.copy(), self.class_hist.copy(),
                            self.raw_hits.copy())


@dataclass
class SemanticEmbeddingBank:
    """Unit-norm class embeddings over the guided (non-last-level) dims."""

    weights: np.ndarray  # (C, G) float64, rows unit norm

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "SemanticEmbeddingBank":
        return SemanticEmbeddingBank(self.weights.copy())


@dataclass
class FeatureBatch:
    features: np.ndarray          # (B, h, w, D) float64
    labels: np.ndarray            # (B, h, w) int32, UNLABELED allowed
    frame_index: int | None = None

    @property
    def positions(self) -> int:
        b, h, w = self.labels.shape
        return b * h * w

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(-1, self.features.shape[-1])

    def flat_labels(self) -> np.ndarray:
        return self.labels.reshape(-1)


def validate_batch(batch: FeatureBatch, config: EngineConfig) -> None:
    if batch.features.ndim != 4 or batch.features.shape[-1] != config.code_dim:
        raise DataFormatError("feature batch shape must be (B, h, w, code_dim)")
    if batch.labels.shape != batch.features.shape[:3]:
        raise DataFormatError("labels shape must match feature batch positions")
    if batch.positions == 0:
        raise DataFormatError("empty batch")
    if not np.all(np.isfinite(batch.features)):
        raise DataFormatError("non-finite feature value in batch")
    labels = batch.flat_labels()
    if np.any((labels != UNLABELED) & ((labels < 0) | (labels >= config.num_classes))):
        raise DataFormatError("labels must be in [0, num_classes) or UNLABELED")


@dataclass
class QuantizationResult:
    indices: np.ndarray       # (B, h, w) int64 into the codebook
    min_distance: np.ndarray  # (B, h, w) float64, multi-level distance at argmin
    quantized: np.ndarray     # (B, h, w, D) selected code vectors
    aggregated: np.ndarray    # (B, h, w, D_agg) aggregation-mode-dependent
    codebook_loss: float      # mean squared full-vector quantization error
    commit_loss: float        # gamma_commit * codebook_loss

    def flat_indices(self) -> np.ndarray:
        return self.indices.reshape(-1)


@dataclass
class AnchorSet:
    """Per-entry nearest batch feature, used to reset under-used entries."""

    features: np.ndarray   # (K, D)
    labels: np.ndarray     # (K,) int32
    positions: np.ndarray  # (K,) flat scan-order position of each anchor


@dataclass
class LearnerGrads:
    grad_bank: np.ndarray     # (C, G)
    grad_entries: np.ndarray  # (K, G); zero rows for unlabeled entries


@dataclass
class MetricsReport:
    step_index: int
    active_fraction: float
    perplexity: float
    uniqueness: dict[float, float] = field(default_factory=dict)
    silhouette: float = float("nan")
    dbi: float = float("nan")
    recon_mse: float = float("nan")
    recon_psnr_db: float = float("nan")
    label_agreement: float = float("nan")
    loss_semantic: float = float("nan")
    codebook_loss: float = float("nan")
    commit_loss: float = float("nan")
