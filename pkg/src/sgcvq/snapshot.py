"""Bit-exact engine state snapshots.

Layout (all multi-byte values little-endian):

    SGCVQ-SNAPSHOT v1            text line
    K=.. D=.. N=.. C=..          text line
    config={...}                 text line, canonical JSON echo of EngineConfig
    version=..                   text line, codebook version counter
    payload                      arrays in fixed order, each prefixed by a
                                 uint64 element count:
                                   entries      float64 (K*D)
                                   entry_class  int32   (K)
                                   ema_usage    float64 (K)
                                   class_hist   float64 (K*C)
                                   raw_hits     uint64  (K*C)
                                   bank         float64 (C*G)
    crc                          uint32 zlib.crc32 of the payload

Floats round-trip exactly: the JSON echo uses repr-based float encoding and
the arrays are stored as raw IEEE-754 bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import EngineConfig, validate_config
from .errors import SnapshotError
from .state import Codebook, SemanticEmbeddingBank, UsageTracker

_MAGIC = b"SGCVQ-SNAPSHOT v1\n"

_ARRAY_ORDER = (
    ("entries", "<f8"),
    ("entry_class", "<i4"),
    ("ema_usage", "<f8"),
    ("class_hist", "<f8"),
    ("raw_hits", "<u8"),
    ("bank", "<f8"),
)


def _config_json(config: EngineConfig) -> str:
    d = dataclasses.asdict(config)
    d["level_dims"] = list(d["level_dims"])
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def snapshot_save(codebook: Codebook, tracker: UsageTracker,
                  bank: SemanticEmbeddingBank, config: EngineConfig) -> bytes:
    k, d = codebook.entries.shape
    c = tracker.class_hist.shape[1]
    arrays = {
        "entries": codebook.entries,
        "entry_class": codebook.entry_class,
        "ema_usage": tracker.ema_usage,
        "class_hist": tracker.class_hist,
        "raw_hits": tracker.raw_hits,
        "bank": bank.weights,
    }
    payload = b""
    for name, dtype in _ARRAY_ORDER:
        arr = np.ascontiguousarray(arrays[name], dtype=dtype)
        payload += struct.pack("<Q", arr.size) + arr.tobytes()
    header = (
        _MAGIC
        + f"K={k} D={d} N={config.num_levels} C={c}\n".encode()
        + f"config={_config_json(config)}\n".encode()
        + f"version={codebook.version}\n".encode()
    )
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def snapshot_load(data: bytes) -> tuple[Codebook, UsageTracker,
                                        SemanticEmbeddingBank, EngineConfig]:
    if not data.startswith(_MAGIC):
        first = data.split(b"\n", 1)[0]
        raise SnapshotError(f"snapshot format version mismatch: {first!r}")
    try:
        head_end = data.index(b"\n", data.index(b"\n", data.index(b"\n", len(_MAGIC)) + 1) + 1) + 1
    except ValueError as exc:
        raise SnapshotError("truncated snapshot header") from exc
    lines = data[len(_MAGIC):head_end].split(b"\n")
    dims_line, config_line, version_line = lines[0], lines[1], lines[2]
    try:
        dims = dict(part.split(b"=") for part in dims_line.split(b" "))
        k, d, n, c = (int(dims[key]) for key in (b"K", b"D", b"N", b"C"))
    except (ValueError, KeyError) as exc:
        raise SnapshotError("malformed snapshot dims line") from exc
    if not config_line.startswith(b"config=") or not version_line.startswith(b"version="):
        raise SnapshotError("malformed snapshot header lines")
    try:
        raw_cfg = json.loads(config_line[len(b"config="):].decode())
        raw_cfg["level_dims"] = tuple(raw_cfg["level_dims"])
        config = validate_config(EngineConfig(**raw_cfg))
    except (ValueError, TypeError, KeyError) as exc:
        raise SnapshotError(f"bad snapshot config echo: {exc}") from exc
    version = int(version_line[len(b"version="):])

    g = config.guided_dim
    shapes = {
        "entries": (k, d),
        "entry_class": (k,),
        "ema_usage": (k,),
        "class_hist": (k, c),
        "raw_hits": (k, c),
        "bank": (c, g),
    }
    arrays = {}
    offset = head_end
    for name, dtype in _ARRAY_ORDER:
        if offset + 8 > len(data) - 4:
            raise SnapshotError("truncated snapshot stream")
        (count,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        expected = int(np.prod(shapes[name]))
        if count != expected:
            raise SnapshotError(f"array {name} has {count} elements, expected {expected}")
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(data) - 4:
            raise SnapshotError("truncated snapshot stream")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count,
                                     offset=offset).reshape(shapes[name]).copy()
        offset += nbytes
    if offset + 4 != len(data):
        raise SnapshotError("trailing bytes after snapshot checksum")
    (crc,) = struct.unpack_from("<I", data, offset)
    if crc != zlib.crc32(data[head_end:offset]):
        raise SnapshotError("snapshot checksum failure")

    codebook = Codebook(entries=arrays["entries"],
                        entry_class=arrays["entry_class"].astype(np.int32),
                        version=version)
    tracker = UsageTracker(ema_usage=arrays["ema_usage"],
                           class_hist=arrays["class_hist"],
                           raw_hits=arrays["raw_hits"])
    bank = SemanticEmbeddingBank(arrays["bank"])
    return codebook, tracker, bank, config


def save_snapshot_file(path: str | Path, codebook, tracker, bank, config) -> None:
    Path(path).write_bytes(snapshot_save(codebook, tracker, bank, config))


def load_snapshot_file(path: str | Path):
    return snapshot_load(Path(path).read_bytes())
