"""Semantic-guided multi-level vector quantization engine.

Core pieces: a multi-level nearest-neighbor quantizer, usage-driven online
clustering with dead-entry reactivation, an angular-margin semantic learner
over class embeddings, codebook-health metrics, a deterministic synthetic
data generator, and an experiment harness with a CLI.
"""

from .config import UNLABELED, EngineConfig, validate_config
from .engine import EngineState, init_engine, step
from .errors import (ConfigError, DataFormatError, MetricsError,
                     NumericalError, SemanticLearnerError, SnapshotError)
from .harness import (ExperimentConfig, compare_experiment, execute,
                      load_experiment_config, parse_experiment_config,
                      quantize_features, run_experiment)
from .metrics import (davies_bouldin, label_agreement, reconstruction_metrics,
                      semantic_uniqueness, silhouette_score, usage_report)
from .quantizer import (LevelWeights, aggregate, compute_level_weights,
                        multi_level_distance, quantize)
from .snapshot import snapshot_load, snapshot_save
from .state import (AnchorSet, Codebook, FeatureBatch, LearnerGrads,
                    MetricsReport, QuantizationResult, SemanticEmbeddingBank,
                    UsageTracker)
from .synth import (MixtureSpec, SequenceSpec, load_features, sample_batch,
                    sample_sequence, save_features)

__version__ = "0.1.0"
