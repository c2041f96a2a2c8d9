"""Binary checkpoint format.

Little-endian layout::

    b"ACUN"                      magic
    u32                          format version
    u32 n, n bytes               ModelConfig as UTF-8 JSON
    u32 count                    named parameter table, then per entry:
        u16 n, n bytes           name
        u8                       dtype tag (1 = float64)
        u8 ndim, ndim * u32      shape
        prod(shape) * 8 bytes    raw float64 data
    u32 n, n bytes               metadata (train config, epoch, val loss, curves) as JSON

Batch-norm running statistics are stored in the parameter table alongside
the learnable weights.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig

MAGIC = b"ACUN"
VERSION = 1
DTYPE_F64 = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    train_config: dict = field(default_factory=dict)
    epoch: int = 0
    val_loss: float = float("nan")
    history: list[dict] = field(default_factory=list)


def _write_blob(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def save_checkpoint(path: str | Path, cp: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_blob(buf, json.dumps(cp.model_config.to_dict(), sort_keys=True).encode())
    buf.write(struct.pack("<I", len(cp.params)))
    for name, value in cp.params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    meta = {
        "train_config": cp.train_config,
        "epoch": cp.epoch,
        "val_loss": cp.val_loss,
        "history": cp.history,
    }
    _write_blob(buf, json.dumps(meta).encode())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes, path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint (wanted {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("I")
        return self.take(n)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    try:
        model_config = ModelConfig.from_dict(json.loads(r.blob()))
        (count,) = r.unpack("I")
        params = {}
        for _ in range(count):
            (n,) = r.unpack("H")
            name = r.take(n).decode()
            tag, ndim = r.unpack("BB")
            if tag != DTYPE_F64:
                raise CheckpointError(f"{path}: parameter {name!r} has unknown dtype tag {tag}")
            shape = r.unpack(f"{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        meta = json.loads(r.blob())
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint: {exc}") from None
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(
        model_config=model_config,
        params=params,
        train_config=meta["train_config"],
        epoch=meta["epoch"],
        val_loss=meta["val_loss"],
        history=meta["history"],
    )
