"""Codebook-health and clustering-quality measurement.

Silhouette and Davies-Bouldin are computed in the plain textbook form (full
pairwise distances, per-point loop) so they agree bit-for-bit with the
brute-force oracles in the test suite; at codebook scale (K up to a few
thousand points) that is cheap.
"""

from __future__ import annotations

import numpy as np

from .config import UNLABELED
from .errors import MetricsError


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def silhouette_score(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean of (b - a) / max(a, b); singleton clusters and 0/0 score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    m = points.shape[0]
    if m < 3:
        raise MetricsError("silhouette needs at least 3 points")
    classes = np.unique(labels)
    if classes.size < 2:
        raise MetricsError("fewer than 2 clusters")
    dist = _pairwise_distances(points)
    scores = np.empty(m)
    for i in range(m):
        own = labels[i]
        same = np.flatnonzero((labels == own) & (np.arange(m) != i))
        if same.size == 0:
            scores[i] = 0.0
            continue
        a = float(np.mean(dist[i, same]))
        b = min(float(np.mean(dist[i, labels == other]))
                for other in classes if other != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(np.mean(scores))


def davies_bouldin(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean over clusters of the worst (S_i + S_j) / ||mu_i - mu_j|| ratio."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.shape[0] < 3:
        raise MetricsError("davies_bouldin needs at least 3 points")
    classes = np.unique(labels)
    n = classes.size
    if n < 2:
        raise MetricsError("fewer than 2 clusters")
    cents = np.stack([points[labels == c].mean(axis=0) for c in classes])
    scatter = np.array([
        float(np.mean(np.sqrt(((points[labels == c] - cents[i]) ** 2).sum(axis=1))))
        for i, c in enumerate(classes)
    ])
    worst = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(n):
            if j == i:
                continue
            sep = float(np.sqrt(((cents[i] - cents[j]) ** 2).sum()))
            num = scatter[i] + scatter[j]
            if sep == 0.0:
                r = 0.0 if num == 0.0 else np.inf
            else:
                r = num / sep
            best = max(best, r)
        worst[i] = best
    return float(np.mean(worst))


def semantic_uniqueness(raw_hits: np.ndarray,
                        thresholds: list[float]) -> dict[float, float]:
    """Fraction of entries whose dominant-class hit share strictly exceeds t.

    Entries with zero lifetime hits score 0; the denominator is all K
    entries, so collapsed codebooks report near-zero ratios.
    """
    if any(not (0.0 < t < 1.0) for t in thresholds):
        raise MetricsError("thresholds must lie in (0, 1)")
    hits = raw_hits.astype(np.float64)
    totals = hits.sum(axis=1)
    p = np.zeros(hits.shape[0])
    nz = totals > 0
    p[nz] = hits[nz].max(axis=1) / totals[nz]
    k = hits.shape[0]
    return {float(t): float((p > t).sum() / k) for t in thresholds}


def usage_report(hit_window: np.ndarray) -> tuple[float, float]:
    """(active_fraction, perplexity) over a (T, K) window of per-step hits."""
    hit_window = np.atleast_2d(np.asarray(hit_window, dtype=np.float64))
    if hit_window.size == 0:
        raise MetricsError("empty usage window")
    totals = hit_window.sum(axis=0)
    grand = totals.sum()
    if grand == 0:
        raise MetricsError("usage window contains no hits")
    active = float((totals > 0).sum() / totals.shape[0])
    probs = totals[totals > 0] / grand
    perplexity = float(np.exp(-(probs * np.log(probs)).sum()))
    return active, perplexity


def label_agreement(indices: np.ndarray, labels: np.ndarray,
                    entry_class: np.ndarray) -> float:
    """Fraction of labeled positions whose entry carries the same class.

    Positions with an unlabeled feature or an unlabeled assigned entry are
    excluded from both sides of the ratio.
    """
    indices = indices.reshape(-1)
    labels = labels.reshape(-1)
    eligible = (labels != UNLABELED) & (entry_class[indices] != UNLABELED)
    if not eligible.any():
        raise MetricsError("no eligible positions")
    return float((entry_class[indices[eligible]] == labels[eligible]).mean())


def reconstruction_metrics(reference: np.ndarray,
                           output: np.ndarray) -> tuple[float, float]:
    """(mse, psnr_db) in feature space; peak is the reference value range.

    psnr is +inf when mse is 0 and -inf when the reference is constant but
    the error is not.
    """
    if reference.shape != output.shape:
        raise MetricsError("reconstruction shapes differ")
    mse = float(((reference - output) ** 2).mean())
    if mse == 0.0:
        return 0.0, float("inf")
    peak = float(reference.max() - reference.min())
    if peak == 0.0:
        return mse, float("-inf")
    return mse, float(10.0 * np.log10(peak * peak / mse))
