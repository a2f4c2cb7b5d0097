"""
Binary checkpoint format.

Layout::

    b"MPTSCKPT"                 8 bytes magic
    header length               uint32, little-endian
    header CRC-32               uint32, little-endian
    header                      UTF-8 JSON
    payload                     float32 little-endian, tensors concatenated in manifest order

The header carries ``format_version``, the model config, the period set, the
training normalisation statistics, and a manifest of
``{name, shape, offset}`` entries (byte offsets into the payload), plus the
payload's length and CRC-32. Any mismatch on load raises
:class:`~mptsnet.errors.CheckpointError` before parameters are returned.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormalizationStats
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, check_params
from .numerics import Tensor
from .spectral import PeriodSet

MAGIC = b"MPTSCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sII")
_FLOAT = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ModelConfig
    period_set: PeriodSet
    params: dict[str, Tensor]
    normalization: NormalizationStats | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file + rename). Parameters are stored as float32."""
    check_params(ckpt.params, ckpt.config)
    manifest, chunks, offset = [], [], 0
    for name, t in ckpt.params.items():
        arr = np.ascontiguousarray(t.data, dtype=_FLOAT)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "period_set": ckpt.period_set.to_dict(),
        "normalization": ckpt.normalization.to_dict() if ckpt.normalization else None,
        "parameters": manifest,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(_PREAMBLE.pack(MAGIC, len(raw), zlib.crc32(raw)))
            fh.write(raw)
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    """Read and validate a checkpoint; ``expected`` guards against config mismatch."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}") from None
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None

    if len(blob) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, header_len, header_crc = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    raw = blob[_PREAMBLE.size:_PREAMBLE.size + header_len]
    if len(raw) != header_len:
        raise CheckpointError(f"{path}: truncated header")
    if zlib.crc32(raw) != header_crc:
        raise CheckpointError(f"{path}: header checksum mismatch (corrupted file)")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} is not supported (expected {FORMAT_VERSION})"
        )

    payload = blob[_PREAMBLE.size + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch (corrupted file)")

    try:
        config = ModelConfig.from_dict(header["config"])
        period_set = PeriodSet.from_dict(header["period_set"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid config in header: {exc}") from None
    if expected is not None and expected != config:
        ours, theirs = config.to_dict(), expected.to_dict()
        diffs = {k: (ours[k], theirs[k]) for k in ours if ours[k] != theirs[k]}
        raise ConfigError(f"{path}: checkpoint config differs from the requested one: {diffs}")

    params = {}
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start, stop = entry["offset"], entry["offset"] + count * _FLOAT.itemsize
        if stop > len(payload):
            raise CheckpointError(f"{path}: parameter {entry['name']} runs past the payload")
        arr = np.frombuffer(payload[start:stop], dtype=_FLOAT).reshape(shape).astype(np.float32)
        params[entry["name"]] = Tensor(arr, requires_grad=True, dtype=np.float32, name=entry["name"])
    try:
        check_params(params, config)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    norm = header.get("normalization")
    return Checkpoint(config, period_set, params, NormalizationStats.from_dict(norm) if norm else None)
