"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    b"MSAD"  u32 version
    u32 config_len, config JSON (utf-8)
    u32 record_count
    per record:
        u16 name_len, name (utf-8)
        u8 flags (bit 0: trainable)
        u8 precision (4 = float32, 8 = float64)
        u8 ndim, u32 * ndim extents
        raw little-endian values, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelGraph, build_msadnet

MAGIC = b"MSAD"
VERSION = 1


def _encode_record(name: str, arr: np.ndarray, trainable: bool) -> bytes:
    if arr.dtype == np.float32:
        code, le = 4, "<f4"
    elif arr.dtype == np.float64:
        code, le = 8, "<f8"
    else:
        raise CheckpointError(f"cannot store {name} with dtype {arr.dtype}")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BBB", int(trainable), code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=le).tobytes()


def save_checkpoint(path, model: ModelGraph, extra: dict[str, Any] | None = None) -> None:
    """Write config (model config plus any ``extra`` run metadata) and all state."""
    config = {"model": model.config.to_dict()}
    if extra:
        config.update(extra)
    cfg = json.dumps(config, sort_keys=True).encode()
    records = [_encode_record(n, t.data, True) for n, t in model.named_parameters()]
    records += [_encode_record(n, b, False) for n, b in model.named_buffers()]
    blob = MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(cfg)) + cfg
    blob += struct.pack("<I", len(records)) + b"".join(records)
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Return (config dict, name -> array) without building a model."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not an MSAD checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = r.unpack("<I")
    config = json.loads(r.take(clen).decode())
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        _flags, code, ndim = r.unpack("<BBB")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dt = {4: np.dtype("<f4"), 8: np.dtype("<f8")}.get(code)
        if dt is None:
            raise CheckpointError(f"record {name}: unknown precision code {code}")
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape)
        state[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes in checkpoint")
    return config, state


def load_checkpoint(path) -> tuple[ModelGraph, dict[str, Any]]:
    config, state = read_checkpoint(path)
    model = build_msadnet(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(state)
    return model, config
