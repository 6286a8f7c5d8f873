"""Engine state and the per-step update pipeline.

A step runs: quantize -> usage update -> decay factors -> anchor selection
-> entry class assignment -> low-slice update -> high-slice update -> (sgc
only) semantic learner. The codebook is committed exactly once per step, so
its version counter advances by 1.

Variants:
  sgc         full pipeline; labeled anchors mix the class embedding into
              the high slice, and the angular learner refines labeled
              entries and the bank each step.
  cvq         same clustering but without any semantic machinery.
  vanilla_ema no reactivation: hit entries follow a smoothed running mean of
              their assigned features, unhit entries never move.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import clustering, quantizer, semantic
from .config import UNLABELED, EngineConfig, validate_config
from .errors import NumericalError, SemanticLearnerError
from .rng import STREAM_CODEBOOK, stream
from .state import (Codebook, FeatureBatch, QuantizationResult,
                    SemanticEmbeddingBank, UsageTracker, validate_batch)

VANILLA_SMOOTHING = 1e-5


@dataclass
class EngineState:
    config: EngineConfig
    weights: quantizer.LevelWeights
    codebook: Codebook
    tracker: UsageTracker
    bank: SemanticEmbeddingBank
    step_index: int = 0
    last_semantic_loss: float | None = None
    # vanilla_ema running-mean accumulators
    ema_counts: np.ndarray = field(default=None)  # type: ignore[assignment]
    ema_sums: np.ndarray = field(default=None)    # type: ignore[assignment]

    @property
    def high_dim(self) -> int:
        return quantizer.high_split(self.weights, self.config.sigma,
                                    self.config.level_dims)


def init_engine(config: EngineConfig,
                initial_entries: np.ndarray | None = None) -> EngineState:
    config = validate_config(config)
    k, d = config.codebook_size, config.code_dim
    if initial_entries is None:
        entries = stream(config.seed, STREAM_CODEBOOK).standard_normal((k, d))
    else:
        entries = np.array(initial_entries, dtype=np.float64)
        if entries.shape != (k, d):
            raise NumericalError("initial entries shape mismatch")
    return EngineState(
        config=config,
        weights=quantizer.compute_level_weights(config.alpha, config.num_levels),
        codebook=Codebook(entries=entries,
                          entry_class=np.full(k, UNLABELED, dtype=np.int32)),
        tracker=UsageTracker.zeros(k, config.num_classes),
        bank=semantic.init_bank(config.num_classes, config.guided_dim, config.seed),
        ema_counts=np.zeros(k),
        ema_sums=np.zeros((k, d)),
    )


def _vanilla_update(state: EngineState, flat: np.ndarray,
                    indices: np.ndarray) -> np.ndarray:
    cfg = state.config
    counts = np.bincount(indices, minlength=cfg.codebook_size).astype(np.float64)
    sums = np.zeros_like(state.ema_sums)
    np.add.at(sums, indices, flat)
    hit = counts > 0
    g = cfg.gamma_ema
    state.ema_counts[hit] = state.ema_counts[hit] * g + counts[hit] * (1.0 - g)
    state.ema_sums[hit] = state.ema_sums[hit] * g + sums[hit] * (1.0 - g)
    entries = state.codebook.entries.copy()
    entries[hit] = state.ema_sums[hit] / (state.ema_counts[hit] + VANILLA_SMOOTHING)[:, None]
    return entries


def step(state: EngineState, batch: FeatureBatch) -> QuantizationResult:
    """Quantize one batch and fold it into the engine state."""
    cfg = state.config
    split = state.high_dim
    validate_batch(batch, cfg)
    flat = batch.flat_features()
    dist = quantizer.distance_matrix(flat, state.codebook.entries, cfg.beta, split)
    result = quantizer.quantize(batch, state.codebook.entries, cfg,
                                state.weights, dist=dist)
    indices = result.flat_indices()
    clustering.update_usage(state.tracker, indices, batch.flat_labels(),
                            cfg.gamma_ema)
    entry_class = clustering.assign_entry_classes(state.tracker.class_hist)
    state.last_semantic_loss = None
    if cfg.variant == "vanilla_ema":
        entries = _vanilla_update(state, flat, indices)
    else:
        decay = clustering.decay_factors(state.tracker.ema_usage,
                                         cfg.codebook_size, cfg.gamma_ema,
                                         cfg.epsilon)
        anchors = clustering.select_anchors(batch, state.codebook.entries,
                                            cfg, state.weights, dist=dist)
        entries = clustering.apply_low_update(state.codebook.entries,
                                              anchors, decay, split)
        bank_high = state.bank.weights[:, :split] if cfg.variant == "sgc" else None
        entries = clustering.apply_high_update(entries, anchors, decay,
                                               split, bank_high)
        if cfg.variant == "sgc" and np.any(entry_class != UNLABELED):
            g = cfg.guided_dim
            try:
                loss, grads = semantic.cosface_loss_and_grads(
                    entries[:, :g], entry_class, state.bank.weights,
                    state.weights, cfg.level_dims, cfg.cosface_s, cfg.cosface_m)
                entries, state.bank = semantic.learner_step(
                    entries, state.bank, grads, cfg.lr_semantic,
                    cfg.train_entries)
            except SemanticLearnerError as exc:
                raise NumericalError(str(exc), step=state.step_index + 1) from exc
            state.last_semantic_loss = loss
    if not np.all(np.isfinite(entries)):
        raise NumericalError("codebook entries became non-finite",
                             step=state.step_index + 1)
    state.codebook.commit(entries=entries, entry_class=entry_class)
    state.step_index += 1
    return result
