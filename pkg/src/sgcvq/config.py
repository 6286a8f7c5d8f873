"""Engine configuration and validation.

All knobs of the quantization engine live in one flat dataclass. The two
gamma hyperparameters are deliberately separate fields: gamma_commit weighs
the commitment loss term, gamma_ema is the usage/statistics decay rate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

# Label value for positions/entries without a semantic class.
UNLABELED = -1

AGGREGATION_MODES = ("linear", "concat", "low_only", "high_only", "cross_attention")
VARIANTS = ("vanilla_ema", "cvq", "sgc")


@dataclass(frozen=True)
class EngineConfig:
    codebook_size: int = 64         # K: number of code vectors
    code_dim: int = 32              # D: dimension of each code vector
    num_levels: int = 4             # N: contiguous levels the vector splits into
    level_dims: tuple[int, ...] = ()  # per-level dims; empty -> near-equal split of D
    alpha: float = 1.0              # steepness of the level-weight falloff
    sigma: float = 0.5              # level weight threshold separating high from low
    beta: float = 1.0               # weight of the high-slice term in the distance
    gamma_ema: float = 0.99         # decay of usage EMA and class histograms
    epsilon: float = 1e-5           # constant in the decay-factor exponent
    gamma_commit: float = 0.25      # commitment loss weight
    num_classes: int = 8            # C: semantic classes
    cosface_s: float = 30.0         # angular loss scale
    cosface_m: float = 0.35         # angular loss additive margin
    lr_semantic: float = 0.01       # gradient step size of the semantic learner
    train_entries: bool = True      # if False, only the embedding bank gets gradients
    aggregation_mode: str = "concat"
    variant: str = "sgc"
    seed: int = 0                   # 64-bit unsigned master seed

    @property
    def guided_dim(self) -> int:
        """Dims covered by the semantic bank: all levels except the last."""
        return self.code_dim - self.level_dims[-1]

    def level_slices(self) -> list[slice]:
        bounds = [0]
        for d in self.level_dims:
            bounds.append(bounds[-1] + d)
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _default_level_dims(code_dim: int, num_levels: int) -> tuple[int, ...]:
    base, rem = divmod(code_dim, num_levels)
    return tuple(base + (1 if i < rem else 0) for i in range(num_levels))


def validate_config(config: EngineConfig) -> EngineConfig:
    """Check every invariant, resolving default level_dims.

    Returns the (possibly completed) config; raises ConfigError naming the
    first violated invariant.
    """
    c = config
    if not isinstance(c.codebook_size, int) or c.codebook_size < 1:
        raise ConfigError("codebook_size must be a positive integer")
    if not isinstance(c.code_dim, int) or c.code_dim < 1:
        raise ConfigError("code_dim must be a positive integer")
    if not isinstance(c.num_levels, int) or c.num_levels < 2:
        raise ConfigError("num_levels range: integer >= 2 required")
    if c.code_dim < c.num_levels:
        raise ConfigError("level_dims sum: code_dim smaller than num_levels")
    if not c.level_dims:
        c = dataclasses.replace(c, level_dims=_default_level_dims(c.code_dim, c.num_levels))
    else:
        c = dataclasses.replace(c, level_dims=tuple(int(d) for d in c.level_dims))
    if len(c.level_dims) != c.num_levels:
        raise ConfigError("level_dims sum: need exactly num_levels entries")
    if any(d < 1 for d in c.level_dims):
        raise ConfigError("level_dims sum: every level dim must be >= 1")
    if sum(c.level_dims) != c.code_dim:
        raise ConfigError("level_dims sum: level dims must sum to code_dim")
    if not c.alpha > 0:
        raise ConfigError("alpha range: must be > 0")
    if not (0.0 < c.sigma < 1.0):
        raise ConfigError("sigma range: must lie in (0, 1)")
    if c.beta < 0:
        raise ConfigError("beta range: must be >= 0")
    if not (0.0 < c.gamma_ema < 1.0):
        raise ConfigError("gamma_ema range: must lie in the open interval (0, 1)")
    if not c.epsilon > 0:
        raise ConfigError("epsilon range: must be > 0")
    if c.gamma_commit < 0:
        raise ConfigError("gamma_commit range: must be >= 0")
    if not isinstance(c.num_classes, int) or c.num_classes < 2:
        raise ConfigError("num_classes range: integer >= 2 required")
    if not c.cosface_s > 0:
        raise ConfigError("cosface_s range: must be > 0")
    if not (0.0 <= c.cosface_m < 1.0):
        raise ConfigError("cosface_m range: must lie in [0, 1)")
    if not c.lr_semantic > 0:
        raise ConfigError("lr_semantic range: must be > 0")
    if c.aggregation_mode not in AGGREGATION_MODES:
        raise ConfigError(f"aggregation_mode: unknown mode {c.aggregation_mode!r}")
    if c.variant not in VARIANTS:
        raise ConfigError(f"variant: unknown variant {c.variant!r}")
    if not isinstance(c.seed, int) or not (0 <= c.seed < 2**64):
        raise ConfigError("seed range: must be an unsigned 64-bit integer")
    return c
