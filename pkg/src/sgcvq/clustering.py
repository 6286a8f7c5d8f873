"""Online clustering of the codebook.

Per step: usage EMAs decide per-entry decay factors; each entry picks the
closest batch feature as its anchor; low slices are EMA-mixed toward the
anchor; high slices additionally mix in the anchor class's semantic
embedding. Decay factors are near 1 for dead entries (full reset onto the
anchor) and collapse to ~0 for used entries (frozen).
"""

from __future__ import annotations

import numpy as np

from .config import UNLABELED, EngineConfig
from .errors import DataFormatError
from .quantizer import LevelWeights, distance_matrix, high_split
from .state import AnchorSet, FeatureBatch, UsageTracker


def update_usage(tracker: UsageTracker, indices: np.ndarray, labels: np.ndarray,
                 gamma_ema: float) -> UsageTracker:
    """Fold one batch's assignments into the tracker (in place).

    ema_usage follows N_k <- N_k*gamma + (n_k/Bhw)*(1-gamma). The per-class
    histogram uses the same decay; raw_hits accumulate undecayed. Unlabeled
    positions count toward usage but not toward the class tallies.
    """
    if indices.shape != labels.shape or indices.ndim != 1:
        raise DataFormatError("indices/labels must be equal-length flat arrays")
    total = indices.shape[0]
    if total == 0:
        raise DataFormatError("empty batch")
    k, c = tracker.class_hist.shape
    counts = np.bincount(indices, minlength=k).astype(np.float64)
    tracker.ema_usage *= gamma_ema
    tracker.ema_usage += (counts / total) * (1.0 - gamma_ema)
    labeled = labels != UNLABELED
    class_counts = np.zeros((k, c))
    if labeled.any():
        np.add.at(class_counts, (indices[labeled], labels[labeled]), 1.0)
    tracker.class_hist *= gamma_ema
    tracker.class_hist += class_counts * (1.0 - gamma_ema)
    tracker.raw_hits += class_counts.astype(np.uint64)
    return tracker


def decay_factors(ema_usage: np.ndarray, codebook_size: int, gamma_ema: float,
                  epsilon: float) -> np.ndarray:
    """a_k = exp(-N_k * K * 10/(1-gamma) - epsilon), in [0, exp(-epsilon)]."""
    scale = codebook_size * 10.0 / (1.0 - gamma_ema)
    return np.exp(-ema_usage * scale - epsilon)


def select_anchors(batch: FeatureBatch, entries: np.ndarray, config: EngineConfig,
                   weights: LevelWeights, dist: np.ndarray | None = None) -> AnchorSet:
    """Closest batch feature per entry; ties go to the earliest scan position."""
    flat = batch.flat_features()
    if flat.shape[0] == 0:
        raise DataFormatError("empty batch")
    if dist is None:
        split = high_split(weights, config.sigma, config.level_dims)
        dist = distance_matrix(flat, entries, config.beta, split)
    positions = np.argmin(dist, axis=0)
    return AnchorSet(
        features=flat[positions].copy(),
        labels=batch.flat_labels()[positions].copy(),
        positions=positions,
    )


def assign_entry_classes(class_hist: np.ndarray) -> np.ndarray:
    """Histogram-argmax class per entry; zero-mass entries stay UNLABELED.

    Ties break toward the lowest class id.
    """
    classes = np.argmax(class_hist, axis=1).astype(np.int32)
    classes[class_hist.sum(axis=1) <= 0.0] = UNLABELED
    return classes


def apply_low_update(entries: np.ndarray, anchors: AnchorSet, decay: np.ndarray,
                     split: int) -> np.ndarray:
    """EMA the low slice toward the anchors: c <- c*(1-a) + anchor*a."""
    if not np.all(np.isfinite(anchors.features)):
        raise DataFormatError("non-finite anchor feature")
    a = decay[:, None]
    out = entries.copy()
    out[:, split:] = entries[:, split:] * (1.0 - a) + anchors.features[:, split:] * a
    return out


def apply_high_update(entries: np.ndarray, anchors: AnchorSet, decay: np.ndarray,
                      split: int, bank_high: np.ndarray | None) -> np.ndarray:
    """Update the high slice, mixing in the anchor class's embedding row.

    For a labeled anchor with class y:

        c <- c*(1-a) + (anchor*a + W_y*(1-a)) * a

    (the nested a is kept exactly as specified). bank_high holds the high
    sub-block of the embedding bank rows; passing None, or an unlabeled
    anchor, degrades the update to the plain low-style EMA form. The
    unlabeled path is computed literally in that degraded form so that runs
    without labels are bit-identical to the semantics-free variant.
    """
    if not np.all(np.isfinite(anchors.features)):
        raise DataFormatError("non-finite anchor feature")
    a = decay[:, None]
    high_prev = entries[:, :split]
    anchor_high = anchors.features[:, :split]
    new_high = high_prev * (1.0 - a) + anchor_high * a
    if bank_high is not None:
        num_classes = bank_high.shape[0]
        if np.any(anchors.labels >= num_classes):
            raise DataFormatError("anchor label outside [0, num_classes)")
        labeled = anchors.labels != UNLABELED
        if labeled.any():
            al = a[labeled]
            mixed = anchor_high[labeled] * al + bank_high[anchors.labels[labeled]] * (1.0 - al)
            new_high[labeled] = high_prev[labeled] * (1.0 - al) + mixed * al
    out = entries.copy()
    out[:, :split] = new_high
    return out
