"""Experiment runner: generator -> engine -> metrics, with file outputs.

Experiment configs are JSON with exhaustively-checked keys:

    {
      "engine":   { ... EngineConfig fields ... },
      "mixture":  { ... MixtureSpec fields ... },     # or "sequence": mixture
      "sequence": { ...,"frames": T, "drift_rate": r },  # fields plus these two
      "steps": 2000,
      "batch_shape": [1, 16, 16],
      "metrics_every": 1,
      "usage_window": 100,
      "variants": ["vanilla_ema", "cvq", "sgc"],      # used by compare
      "init": {"scale": 1.0, "dead_entries": 0, "dead_distance": 0.0}
    }

Outputs are pure functions of (config, seed): metrics.csv rows every
metrics_every steps in a fixed column order, a final JSON report, and a
snapshot of the trained state. `compare` feeds bit-identical batches (same
generator keys) to every requested variant.
"""

from __future__ import annotations

import dataclasses
import json
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import UNLABELED, VARIANTS, EngineConfig, validate_config
from .engine import EngineState, init_engine, step
from .errors import ConfigError, DataFormatError, MetricsError
from .quantizer import aggregate, compute_level_weights, quantize
from .rng import STREAM_CODEBOOK, STREAM_DEAD, stream
from .snapshot import load_snapshot_file, save_snapshot_file
from .state import FeatureBatch, MetricsReport, QuantizationResult
from .synth import (MixtureSpec, SequenceSpec, load_features, sample_batch,
                    sample_frame, validate_mixture, validate_sequence)

UNIQUENESS_THRESHOLDS = (0.1, 0.3, 0.5, 0.7, 0.9)

CSV_COLUMNS = (
    "step", "active_fraction", "perplexity", "ss", "dbi", "recon_mse",
    "recon_psnr_db", "label_agreement",
    *(f"uniq@{t}" for t in UNIQUENESS_THRESHOLDS),
    "loss_semantic", "codebook_loss", "commit_loss",
)


@dataclass(frozen=True)
class InitSpec:
    scale: float = 1.0
    dead_entries: int = 0
    dead_distance: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    engine: EngineConfig
    mixture: MixtureSpec | None = None
    sequence: SequenceSpec | None = None
    steps: int = 1
    batch_shape: tuple[int, int, int] = (1, 16, 16)
    metrics_every: int = 1
    usage_window: int = 100
    variants: tuple[str, ...] = ("cvq", "sgc")
    init: InitSpec = field(default_factory=InitSpec)


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in {where}")


def _parse_mixture(raw: dict, where: str) -> MixtureSpec:
    fields = {f.name for f in dataclasses.fields(MixtureSpec)}
    _check_keys(raw, fields, where)
    kwargs = dict(raw)
    if "class_weights" in kwargs and kwargs["class_weights"] is not None:
        kwargs["class_weights"] = tuple(float(w) for w in kwargs["class_weights"])
    return validate_mixture(MixtureSpec(**kwargs))


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    top_allowed = {"engine", "mixture", "sequence", "steps", "batch_shape",
                   "metrics_every", "usage_window", "variants", "init"}
    _check_keys(raw, top_allowed, "experiment config")
    if "engine" not in raw:
        raise ConfigError("experiment config requires an 'engine' section")
    engine_fields = {f.name for f in dataclasses.fields(EngineConfig)}
    _check_keys(raw["engine"], engine_fields, "'engine'")
    engine_kwargs = dict(raw["engine"])
    if "level_dims" in engine_kwargs:
        engine_kwargs["level_dims"] = tuple(engine_kwargs["level_dims"])
    engine = validate_config(EngineConfig(**engine_kwargs))

    has_mixture = "mixture" in raw
    has_sequence = "sequence" in raw
    if has_mixture == has_sequence:
        raise ConfigError("exactly one of 'mixture' or 'sequence' is required")
    mixture = sequence = None
    if has_mixture:
        mixture = _parse_mixture(raw["mixture"], "'mixture'")
        data_classes = mixture.num_classes
    else:
        seq_raw = dict(raw["sequence"])
        frames = seq_raw.pop("frames", None)
        drift_rate = seq_raw.pop("drift_rate", 0.0)
        if frames is None:
            raise ConfigError("'sequence' requires a 'frames' count")
        base = _parse_mixture(seq_raw, "'sequence'")
        sequence = validate_sequence(SequenceSpec(mixture=base, frames=int(frames),
                                                  drift_rate=float(drift_rate)))
        data_classes = base.num_classes
    if data_classes != engine.num_classes:
        raise ConfigError("num_classes of engine and data spec must match")

    steps = raw.get("steps")
    if sequence is not None:
        if steps is None:
            steps = sequence.frames
        elif int(steps) != sequence.frames:
            raise ConfigError("steps must equal sequence frames")
    if steps is None or int(steps) < 1:
        raise ConfigError("steps range: must be >= 1")
    metrics_every = int(raw.get("metrics_every", 1))
    if metrics_every < 1:
        raise ConfigError("metrics_every range: must be >= 1")
    usage_window = int(raw.get("usage_window", 100))
    if usage_window < 1:
        raise ConfigError("usage_window range: must be >= 1")
    shape = tuple(int(x) for x in raw.get("batch_shape", (1, 16, 16)))
    if len(shape) != 3 or any(x < 1 for x in shape):
        raise ConfigError("batch_shape must be three positive integers")

    variants = tuple(raw.get("variants", ("cvq", "sgc")))
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"variant: unknown variant {v!r}")

    init_raw = dict(raw.get("init", {}))
    _check_keys(init_raw, {"scale", "dead_entries", "dead_distance"}, "'init'")
    init = InitSpec(scale=float(init_raw.get("scale", 1.0)),
                    dead_entries=int(init_raw.get("dead_entries", 0)),
                    dead_distance=float(init_raw.get("dead_distance", 0.0)))
    if init.scale < 0 or init.dead_distance < 0:
        raise ConfigError("init scale/dead_distance must be >= 0")
    if not (0 <= init.dead_entries <= engine.codebook_size):
        raise ConfigError("init dead_entries must lie in [0, codebook_size]")

    return ExperimentConfig(engine=engine, mixture=mixture, sequence=sequence,
                            steps=int(steps), batch_shape=shape,
                            metrics_every=metrics_every,
                            usage_window=usage_window, variants=variants,
                            init=init)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    with open(path) as f:
        return parse_experiment_config(json.load(f))


def override_config(cfg: ExperimentConfig, seed: int | None = None,
                    variant: str | None = None) -> ExperimentConfig:
    engine = cfg.engine
    mixture, sequence = cfg.mixture, cfg.sequence
    if seed is not None:
        engine = dataclasses.replace(engine, seed=seed)
        if mixture is not None:
            mixture = dataclasses.replace(mixture, seed=seed)
        if sequence is not None:
            sequence = dataclasses.replace(
                sequence, mixture=dataclasses.replace(sequence.mixture, seed=seed))
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"variant: unknown variant {variant!r}")
        engine = dataclasses.replace(engine, variant=variant)
    return dataclasses.replace(cfg, engine=validate_config(engine),
                               mixture=mixture, sequence=sequence)


def build_initial_entries(cfg: ExperimentConfig) -> np.ndarray:
    k, d = cfg.engine.codebook_size, cfg.engine.code_dim
    entries = stream(cfg.engine.seed, STREAM_CODEBOOK).standard_normal((k, d))
    entries *= cfg.init.scale
    n = cfg.init.dead_entries
    if n:
        dirs = stream(cfg.engine.seed, STREAM_DEAD).standard_normal((n, d))
        dirs /= np.sqrt((dirs * dirs).sum(axis=1, keepdims=True))
        entries[k - n:] = dirs * cfg.init.dead_distance
    return entries


def _batch_for_step(cfg: ExperimentConfig, t: int) -> FeatureBatch:
    if cfg.mixture is not None:
        return sample_batch(cfg.mixture, cfg.batch_shape, cfg.engine, counter=t)
    return sample_frame(cfg.sequence, cfg.batch_shape, cfg.engine, frame=t)


def _collect_metrics(state: EngineState, window, batch: FeatureBatch,
                     result: QuantizationResult, step_index: int) -> MetricsReport:
    active, perplexity = metrics_mod.usage_report(np.asarray(window))
    report = MetricsReport(step_index=step_index, active_fraction=active,
                           perplexity=perplexity)
    report.uniqueness = metrics_mod.semantic_uniqueness(
        state.tracker.raw_hits, list(UNIQUENESS_THRESHOLDS))
    entry_class = state.codebook.entry_class
    labeled = entry_class != UNLABELED
    if labeled.sum() >= 3 and np.unique(entry_class[labeled]).size >= 2:
        points = state.codebook.entries[labeled]
        report.silhouette = metrics_mod.silhouette_score(points, entry_class[labeled])
        report.dbi = metrics_mod.davies_bouldin(points, entry_class[labeled])
    reference = aggregate(batch.features, state.config.aggregation_mode,
                          state.weights, state.config.sigma,
                          state.config.level_dims)
    report.recon_mse, report.recon_psnr_db = metrics_mod.reconstruction_metrics(
        reference, result.aggregated)
    try:
        report.label_agreement = metrics_mod.label_agreement(
            result.flat_indices(), batch.flat_labels(), entry_class)
    except MetricsError:
        pass
    if state.last_semantic_loss is not None:
        report.loss_semantic = state.last_semantic_loss
    report.codebook_loss = result.codebook_loss
    report.commit_loss = result.commit_loss
    return report


@dataclass
class RunOutput:
    config: ExperimentConfig
    state: EngineState
    rows: list[MetricsReport]
    final: MetricsReport
    final_batch: FeatureBatch
    final_result: QuantizationResult
    hit_window: np.ndarray


def execute(cfg: ExperimentConfig, variant: str | None = None) -> RunOutput:
    """Train one engine for cfg.steps steps; no file I/O."""
    if variant is not None:
        cfg = override_config(cfg, variant=variant)
    state = init_engine(cfg.engine, initial_entries=build_initial_entries(cfg))
    window: deque[np.ndarray] = deque(maxlen=cfg.usage_window)
    rows: list[MetricsReport] = []
    batch = result = None
    for t in range(cfg.steps):
        batch = _batch_for_step(cfg, t)
        result = step(state, batch)
        window.append(np.bincount(result.flat_indices(),
                                  minlength=cfg.engine.codebook_size))
        if (t + 1) % cfg.metrics_every == 0:
            rows.append(_collect_metrics(state, window, batch, result, t + 1))
    final = rows[-1] if rows and rows[-1].step_index == cfg.steps else \
        _collect_metrics(state, window, batch, result, cfg.steps)
    return RunOutput(config=cfg, state=state, rows=rows, final=final,
                     final_batch=batch, final_result=result,
                     hit_window=np.asarray(window))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _report_row(r: MetricsReport) -> list:
    return [r.step_index, r.active_fraction, r.perplexity, r.silhouette,
            r.dbi, r.recon_mse, r.recon_psnr_db, r.label_agreement,
            *(r.uniqueness[t] for t in UNIQUENESS_THRESHOLDS),
            r.loss_semantic, r.codebook_loss, r.commit_loss]


def write_metrics_csv(path: Path, rows: list[MetricsReport],
                      variant: str | None = None) -> None:
    lines = []
    header = (("variant",) if variant is not None else ()) + CSV_COLUMNS
    lines.append(",".join(header))
    for r in rows:
        cells = ([variant] if variant is not None else []) + _report_row(r)
        lines.append(",".join(_fmt(c) for c in cells))
    path.write_text("\n".join(lines) + "\n")


def _report_dict(cfg: ExperimentConfig, r: MetricsReport) -> dict:
    return {
        "variant": cfg.engine.variant,
        "steps": cfg.steps,
        "seed": cfg.engine.seed,
        "step": r.step_index,
        "active_fraction": r.active_fraction,
        "perplexity": r.perplexity,
        "ss": r.silhouette,
        "dbi": r.dbi,
        "recon_mse": r.recon_mse,
        "recon_psnr_db": r.recon_psnr_db,
        "label_agreement": r.label_agreement,
        "uniqueness": {str(t): r.uniqueness[t] for t in UNIQUENESS_THRESHOLDS},
        "loss_semantic": r.loss_semantic,
        "codebook_loss": r.codebook_loss,
        "commit_loss": r.commit_loss,
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> RunOutput:
    """Train one engine and persist metrics.csv, report.json, snapshot.bin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = execute(cfg)
    write_metrics_csv(out / "metrics.csv", run.rows)
    (out / "report.json").write_text(
        json.dumps(_report_dict(run.config, run.final), sort_keys=True, indent=2)
        + "\n")
    save_snapshot_file(out / "snapshot.bin", run.state.codebook,
                       run.state.tracker, run.state.bank, run.config.engine)
    return run


def _max_workers(n_variants: int) -> int:
    cap = os.environ.get("SGCVQ_THREADS")
    if cap is not None:
        return max(1, min(n_variants, int(cap)))
    return n_variants


def compare_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> dict[str, RunOutput]:
    """Run every configured variant on an identical batch stream."""
    if len(cfg.variants) < 2:
        raise ConfigError("compare requires at least 2 variants")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = _max_workers(len(cfg.variants))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {v: pool.submit(execute, cfg, v) for v in cfg.variants}
            runs = {v: futures[v].result() for v in cfg.variants}
    else:
        runs = {v: execute(cfg, v) for v in cfg.variants}
    lines = [",".join(("variant",) + CSV_COLUMNS)]
    for v in cfg.variants:
        cells = [v] + _report_row(runs[v].final)
        lines.append(",".join(_fmt(c) for c in cells))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    payload = {v: _report_dict(runs[v].config, runs[v].final) for v in cfg.variants}
    (out / "comparison.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return runs


_IDX_MAGIC = b"SGCVQ-IDX v1\n"


def write_indices(path: str | Path, indices: np.ndarray) -> None:
    b, h, w = indices.shape
    with open(path, "wb") as f:
        f.write(_IDX_MAGIC)
        f.write(f"B={b} H={h} W={w}\n".encode())
        f.write(np.ascontiguousarray(indices, dtype="<i4").tobytes())


def quantize_features(snapshot_path: str | Path, features_path: str | Path,
                      out_path: str | Path) -> dict:
    """Tokenize a feature dump with a trained snapshot; returns a summary."""
    codebook, tracker, bank, config = load_snapshot_file(snapshot_path)
    batch = load_features(features_path)
    if batch.features.shape[-1] != config.code_dim:
        raise DataFormatError(
            f"feature dim {batch.features.shape[-1]} does not match "
            f"snapshot code_dim {config.code_dim}")
    weights = compute_level_weights(config.alpha, config.num_levels)
    result = quantize(batch, codebook.entries, config, weights)
    write_indices(out_path, result.indices)
    summary = {
        "positions": int(batch.positions),
        "codebook_loss": result.codebook_loss,
    }
    try:
        summary["label_agreement"] = metrics_mod.label_agreement(
            result.flat_indices(), batch.flat_labels(), codebook.entry_class)
    except MetricsError:
        summary["label_agreement"] = None
    return summary
