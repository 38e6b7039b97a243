"""Versioned binary checkpoint (``PGCK``) for model parameters.

Layout, all little-endian::

    b"PGCK" | u16 version | u32 count |
    count x ( u16 name_len | name utf-8 | u8 rank | rank x u32 dim | f32 payload )

Entries are written in ``state_dict`` order. The model configuration is
stored as an extra rank-1 entry ``meta/model_config`` holding the UTF-8
bytes of its JSON encoding, one byte per float.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError
from .model import DisentangleNet, ModelConfig

MAGIC = b"PGCK"
VERSION = 1
META_KEY = "meta/model_config"


def encode(state, meta=None):
    entries = [(k, v.detach().cpu().numpy()) for k, v in state.items()]
    if meta is not None:
        blob = json.dumps(meta, sort_keys=True).encode()
        entries.append((META_KEY, np.frombuffer(blob, np.uint8).astype(np.float32)))
    out = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise FormatError(f"{what} truncated at byte {pos}: expected {n} bytes, got {len(buf) - pos}")
    return buf[pos:pos + n], pos + n


def decode(buf):
    """Return (ordered dict name -> float32 array, meta dict or None)."""
    head, pos = _take(buf, 0, 10, "header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad magic {head[:4]!r} at byte 0, expected {MAGIC!r}")
    version, count = struct.unpack("<HI", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    tensors, meta = {}, None
    for _ in range(count):
        raw, pos = _take(buf, pos, 2, "name length")
        raw, pos = _take(buf, pos, struct.unpack("<H", raw)[0], "name")
        name = raw.decode()
        raw, pos = _take(buf, pos, 1, "rank")
        rank = raw[0]
        raw, pos = _take(buf, pos, 4 * rank, "dims")
        dims = struct.unpack(f"<{rank}I", raw)
        raw, pos = _take(buf, pos, 4 * int(np.prod(dims, dtype=np.int64)), f"payload of {name}")
        arr = np.frombuffer(raw, "<f4").reshape(dims).astype(np.float32)
        if name == META_KEY:
            meta = json.loads(arr.astype(np.uint8).tobytes())
        else:
            tensors[name] = arr
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after byte {pos}")
    return tensors, meta


def save(path, model):
    Path(path).write_bytes(encode(model.state_dict(), model.cfg.to_dict()))


def load(path):
    tensors, meta = decode(Path(path).read_bytes())
    if meta is None:
        raise FormatError(f"{path}: checkpoint carries no model configuration")
    model = DisentangleNet(ModelConfig(**meta))
    expected = model.state_dict()
    if set(expected) != set(tensors):
        diff = sorted(set(expected) ^ set(tensors))
        raise FormatError(f"{path}: parameter names differ from the model: {diff[:5]}")
    for k, v in tensors.items():
        if tuple(expected[k].shape) != v.shape:
            raise FormatError(f"{path}: {k} has shape {v.shape}, model expects {tuple(expected[k].shape)}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    model.eval()
    return model
