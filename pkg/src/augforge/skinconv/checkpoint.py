"""SKIN checkpoint files.

Layout (little-endian):
    b"SKIN", u32 version, u32 Q, u32 d, u32 |S|
    u32 len + JSON converter config
    u32 n_params, then per parameter: u16 len + name, u8 ndim, u32 dims...
    float64 parameter data in declaration order
    |S| x (u32 len + UTF-8 speaker id)
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .model import ConverterConfig, ConverterModel, param_shapes

MAGIC = b"SKIN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: ConverterModel) -> bytes:
    cfg = model.config
    buf = io.BytesIO()
    n_spk = len(model.speaker_ids)
    buf.write(MAGIC + struct.pack("<IIII", VERSION, cfg.quantization_levels, cfg.speaker_dim, n_spk))
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)) + blob)
    buf.write(struct.pack("<I", len(model.params)))
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in model.params.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for spk in model.speaker_ids:
        raw = str(spk).encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> ConverterModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a SKIN checkpoint")
    version, q, d, n_spk = r.unpack("<IIII")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<I")
    raw_cfg = json.loads(r.take(blob_len).decode("utf-8"))
    try:
        cfg = ConverterConfig(**raw_cfg)
    except TypeError as exc:
        raise CheckpointError(f"bad converter config: {exc}") from exc
    if cfg.quantization_levels != q or cfg.speaker_dim != d:
        raise CheckpointError("header Q/d disagree with the stored config")
    (n_params,) = r.unpack("<I")
    table = []
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        table.append((name, tuple(r.unpack(f"<{ndim}I"))))
    expected = list(param_shapes(cfg, n_spk).items())
    if table != expected:
        raise CheckpointError("dimension table does not match the converter config")
    params = {}
    for name, shape in table:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    speakers = []
    for _ in range(n_spk):
        (n,) = r.unpack("<I")
        speakers.append(r.take(n).decode("utf-8"))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after speaker table")
    return ConverterModel(cfg, params, speakers)


def save(model: ConverterModel, path) -> str:
    """Write the checkpoint; returns its SHA-256."""
    data = dumps(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> ConverterModel:
    return loads(Path(path).read_bytes())


def digest(model: ConverterModel) -> str:
    return hashlib.sha256(dumps(model)).hexdigest()
