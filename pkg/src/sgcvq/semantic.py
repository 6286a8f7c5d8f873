"""Angular-margin learning of class embeddings and labeled codebook entries.

Per guided level l (weight w(l) > 0), with cos(theta_{j,i}) the cosine
between the level-l slice of labeled entry i and row j of the embedding
bank's level-l sub-block:

    L_l = -(1/N_lab) * sum_i log( e^{s(cos_{y_i} - m)}
                                  / (e^{s(cos_{y_i} - m)} + sum_{j != y_i} e^{s cos_j}) )

and the total loss is sum_l w(l) * L_l. Gradients are closed-form, taken
through the cosine normalization of both sides, and verified against central
finite differences in the tests. The loss is invariant to positive scaling
of any entry slice, so entry gradients are tangent to the entry's ray.

Alternative angular losses can be registered in SEMANTIC_LOSSES; only the
additive-margin ("cosface") form ships here.
"""

from __future__ import annotations

import warnings
from typing import Callable

import numpy as np

from .config import UNLABELED
from .errors import SemanticLearnerError
from .quantizer import LevelWeights
from .rng import STREAM_BANK, stream
from .state import LearnerGrads, SemanticEmbeddingBank


def init_bank(num_classes: int, guided_dim: int, seed: int) -> SemanticEmbeddingBank:
    """Seeded random unit-norm rows; random directions avoid collinearity."""
    w = stream(seed, STREAM_BANK).standard_normal((num_classes, guided_dim))
    w /= np.sqrt((w * w).sum(axis=1, keepdims=True))
    return SemanticEmbeddingBank(w)


def _guided_level_slices(level_dims: tuple[int, ...]) -> list[slice]:
    bounds = np.cumsum((0,) + level_dims[:-1])
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def cosface_loss_and_grads(
    entries_guided: np.ndarray,
    entry_class: np.ndarray,
    bank_weights: np.ndarray,
    weights: LevelWeights,
    level_dims: tuple[int, ...],
    s: float,
    m: float,
) -> tuple[float, LearnerGrads]:
    """Weighted per-level angular-margin loss and its gradients.

    entries_guided is the (K, G) guided block of the codebook; unlabeled
    entries are excluded and receive zero gradient rows. Entries with a
    zero-norm slice at some level are excluded from that level with a
    counted warning.
    """
    k, g = entries_guided.shape
    c = bank_weights.shape[0]
    labeled = np.flatnonzero(entry_class != UNLABELED)
    if labeled.size == 0:
        raise SemanticLearnerError("no labeled entries")
    grad_bank = np.zeros((c, g))
    grad_entries = np.zeros((k, g))
    total = 0.0
    skipped = 0
    for lvl, sl in enumerate(_guided_level_slices(level_dims)):
        wl = weights.w[lvl]
        if wl <= 0.0:
            continue
        u_all = entries_guided[labeled, sl]
        u_norms = np.sqrt((u_all * u_all).sum(axis=1))
        keep = u_norms > 0.0
        skipped += int((~keep).sum())
        if not keep.any():
            raise SemanticLearnerError("all slices zero-norm at a guided level")
        rows = labeled[keep]
        u = u_all[keep]
        nu = u_norms[keep][:, None]
        v = bank_weights[:, sl]
        nv = np.sqrt((v * v).sum(axis=1))
        if np.any(nv == 0.0):
            raise SemanticLearnerError("zero-norm embedding bank level slice")
        uhat = u / nu
        vhat = v / nv[:, None]
        cos = uhat @ vhat.T  # (n, C)
        y = entry_class[rows]
        n = rows.size
        logits = s * cos
        logits[np.arange(n), y] = s * (cos[np.arange(n), y] - m)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        zsum = expz.sum(axis=1)
        logp_y = shifted[np.arange(n), y] - np.log(zsum)
        total += wl * float(-logp_y.mean())
        # dL/dcos = s * (softmax - onehot) * w_l / n
        p = expz / zsum[:, None]
        p[np.arange(n), y] -= 1.0
        dcos = (wl * s / n) * p
        # entry side: (dcos @ vhat - rowsum(dcos*cos) * uhat) / ||u||
        ge = (dcos @ vhat - (dcos * cos).sum(axis=1, keepdims=True) * uhat) / nu
        grad_entries[rows, sl] = ge
        # bank side: (dcos^T @ uhat - colsum(dcos*cos) * vhat) / ||v||
        gv = (dcos.T @ uhat - (dcos * cos).sum(axis=0)[:, None] * vhat) / nv[:, None]
        grad_bank[:, sl] = gv
    if skipped:
        warnings.warn(f"cosface: excluded {skipped} zero-norm level slices")
    return total, LearnerGrads(grad_bank=grad_bank, grad_entries=grad_entries)


def cosface_loss(entries_guided, entry_class, bank_weights, weights, level_dims,
                 s, m) -> float:
    loss, _ = cosface_loss_and_grads(entries_guided, entry_class, bank_weights,
                                     weights, level_dims, s, m)
    return loss


def cosface_gradients(entries_guided, entry_class, bank_weights, weights,
                      level_dims, s, m) -> LearnerGrads:
    _, grads = cosface_loss_and_grads(entries_guided, entry_class, bank_weights,
                                      weights, level_dims, s, m)
    return grads


def learner_step(
    entries: np.ndarray,
    bank: SemanticEmbeddingBank,
    grads: LearnerGrads,
    lr: float,
    train_entries: bool = True,
) -> tuple[np.ndarray, SemanticEmbeddingBank]:
    """One gradient step; bank rows are re-normalized to unit norm.

    Entry guided slices are not re-normalized: their stored magnitudes
    matter to quantization.
    """
    g = grads.grad_bank.shape[1]
    new_w = bank.weights - lr * grads.grad_bank
    norms = np.sqrt((new_w * new_w).sum(axis=1, keepdims=True))
    if not np.all(np.isfinite(new_w)) or np.any(norms == 0.0):
        raise SemanticLearnerError("non-finite or degenerate bank update")
    new_w /= norms
    new_entries = entries.copy()
    if train_entries:
        new_entries[:, :g] -= lr * grads.grad_entries
        if not np.all(np.isfinite(new_entries)):
            raise SemanticLearnerError("non-finite entry update")
    return new_entries, SemanticEmbeddingBank(new_w)


SemanticLossFn = Callable[..., tuple[float, LearnerGrads]]

# Extension point for alternative angular losses (same call signature as
# cosface_loss_and_grads). Only cosface is bundled.
SEMANTIC_LOSSES: dict[str, SemanticLossFn] = {"cosface": cosface_loss_and_grads}
