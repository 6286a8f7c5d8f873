"""Deterministic labeled synthetic features.

Classes live as fixed seeded centroid directions in the guided dims (all
levels but the last); the last level carries class-independent noise. The
whole stream is a pure function of (spec, shape, counter), so two runs with
the same seed are bit-identical and parallel generation matches sequential.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import UNLABELED, EngineConfig
from .errors import ConfigError, DataFormatError
from .rng import STREAM_BATCH, STREAM_CENTROIDS, STREAM_DRIFT, stream
from .state import FeatureBatch

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    num_classes: int = 8
    class_weights: tuple[float, ...] = ()   # empty -> equal weights
    separation: float = 10.0                # centroid norm in the guided dims
    within_spread: float = 1.0              # isotropic noise on guided dims
    detail_spread: float = 1.0              # noise on the last level's dims
    unlabeled_fraction: float = 0.0         # in [0, 1]
    seed: int = 0


@dataclass(frozen=True)
class SequenceSpec:
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    frames: int = 1
    drift_rate: float = 0.0  # per-frame centroid displacement magnitude


def validate_mixture(spec: MixtureSpec) -> MixtureSpec:
    if spec.num_classes < 2:
        raise ConfigError("num_classes range: integer >= 2 required")
    if not spec.class_weights:
        w = tuple(1.0 / spec.num_classes for _ in range(spec.num_classes))
        spec = dataclasses.replace(spec, class_weights=w)
    if len(spec.class_weights) != spec.num_classes:
        raise ConfigError("class_weights length must equal num_classes")
    if any(w < 0 for w in spec.class_weights):
        raise ConfigError("class_weights must be non-negative")
    if abs(sum(spec.class_weights) - 1.0) > _WEIGHT_TOL:
        raise ConfigError("class_weights sum: must equal 1")
    if not spec.separation > 0:
        raise ConfigError("separation range: must be > 0")
    if spec.within_spread < 0 or spec.detail_spread < 0:
        raise ConfigError("spread range: must be >= 0")
    if not (0.0 <= spec.unlabeled_fraction <= 1.0):
        raise ConfigError("unlabeled_fraction range: must lie in [0, 1]")
    if not isinstance(spec.seed, int) or not (0 <= spec.seed < 2**64):
        raise ConfigError("seed range: must be an unsigned 64-bit integer")
    return spec


def validate_sequence(spec: SequenceSpec) -> SequenceSpec:
    mixture = validate_mixture(spec.mixture)
    if spec.frames < 1:
        raise ConfigError("frames range: must be >= 1")
    if spec.drift_rate < 0:
        raise ConfigError("drift_rate range: must be >= 0")
    return SequenceSpec(mixture=mixture, frames=spec.frames, drift_rate=spec.drift_rate)


def class_centroids(spec: MixtureSpec, guided_dim: int) -> np.ndarray:
    """(C, G) seeded directions of norm `separation`."""
    dirs = stream(spec.seed, STREAM_CENTROIDS).standard_normal(
        (spec.num_classes, guided_dim))
    dirs /= np.sqrt((dirs * dirs).sum(axis=1, keepdims=True))
    return dirs * spec.separation


def _drifted_centroids(spec: SequenceSpec, guided_dim: int, frame: int) -> np.ndarray:
    cents = class_centroids(spec.mixture, guided_dim)
    for t in range(1, frame + 1):
        step = stream(spec.mixture.seed, STREAM_DRIFT, t).standard_normal(
            (spec.mixture.num_classes, guided_dim))
        step /= np.sqrt((step * step).sum(axis=1, keepdims=True))
        cents = cents + step * spec.drift_rate
    return cents


def _sample(spec: MixtureSpec, centroids: np.ndarray, shape: tuple[int, int, int],
            config: EngineConfig, counter: int,
            frame_index: int | None = None) -> FeatureBatch:
    b, h, w = shape
    m = b * h * w
    if m == 0:
        raise ConfigError("batch shape must contain at least one position")
    g = config.guided_dim
    d = config.code_dim
    rng = stream(spec.seed, STREAM_BATCH, counter)
    classes = rng.choice(spec.num_classes, size=m, p=np.asarray(spec.class_weights))
    guided = centroids[classes] + rng.standard_normal((m, g)) * spec.within_spread
    detail = rng.standard_normal((m, d - g)) * spec.detail_spread
    features = np.concatenate([guided, detail], axis=1)
    labels = classes.astype(np.int32)
    if spec.unlabeled_fraction > 0.0:
        hide = rng.random(m) < spec.unlabeled_fraction
        labels[hide] = UNLABELED
    return FeatureBatch(
        features=features.reshape(b, h, w, d),
        labels=labels.reshape(b, h, w),
        frame_index=frame_index,
    )


def sample_batch(spec: MixtureSpec, shape: tuple[int, int, int],
                 config: EngineConfig, counter: int = 0) -> FeatureBatch:
    spec = validate_mixture(spec)
    return _sample(spec, class_centroids(spec, config.guided_dim), shape,
                   config, counter)


def sample_frame(spec: SequenceSpec, shape: tuple[int, int, int],
                 config: EngineConfig, frame: int) -> FeatureBatch:
    """Frame `frame` of the drifting sequence; frame 0 equals sample_batch."""
    spec = validate_sequence(spec)
    if not (0 <= frame < spec.frames):
        raise ConfigError("frame index outside sequence")
    cents = _drifted_centroids(spec, config.guided_dim, frame)
    return _sample(spec.mixture, cents, shape, config, frame, frame_index=frame)


def sample_sequence(spec: SequenceSpec, shape: tuple[int, int, int],
                    config: EngineConfig) -> list[FeatureBatch]:
    spec = validate_sequence(spec)
    return [sample_frame(spec, shape, config, t) for t in range(spec.frames)]


# ---------------------------------------------------------------------------
# Feature dump format: text header then raw little-endian payload.
#   SGCVQ-FEAT v1
#   B=<b> H=<h> W=<w> D=<d>
#   <float64 features, B*h*w*D values> <int32 labels, B*h*w values>

_FEAT_MAGIC = b"SGCVQ-FEAT v1\n"
_DIMS_RE = re.compile(rb"^B=(\d+) H=(\d+) W=(\d+) D=(\d+)$")


def save_features(path: str | Path, batch: FeatureBatch) -> None:
    b, h, w = batch.labels.shape
    d = batch.features.shape[-1]
    with open(path, "wb") as f:
        f.write(_FEAT_MAGIC)
        f.write(f"B={b} H={h} W={w} D={d}\n".encode())
        f.write(np.ascontiguousarray(batch.features, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(batch.labels, dtype="<i4").tobytes())


def load_features(path: str | Path) -> FeatureBatch:
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != _FEAT_MAGIC:
            raise DataFormatError("not a feature dump (bad magic line)")
        match = _DIMS_RE.match(f.readline().strip())
        if not match:
            raise DataFormatError("feature dump has a malformed dims line")
        b, h, w, d = (int(x) for x in match.groups())
        n = b * h * w
        feat_bytes = f.read(n * d * 8)
        if len(feat_bytes) != n * d * 8:
            raise DataFormatError("feature dump truncated (features)")
        label_bytes = f.read(n * 4)
        if len(label_bytes) != n * 4:
            raise DataFormatError("feature dump truncated (labels)")
    features = np.frombuffer(feat_bytes, dtype="<f8").reshape(b, h, w, d).copy()
    labels = np.frombuffer(label_bytes, dtype="<i4").reshape(b, h, w).copy()
    return FeatureBatch(features=features, labels=labels)
