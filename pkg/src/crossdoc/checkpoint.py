"""Versioned binary checkpoints: parameters, optimizer state, config echo.

Layout (little-endian):

    magic "XCKP" | u16 version=1 | u64 step
    | u32 config-text length | utf-8 config text
    | named-array section (parameters)
    | u8 has-optimizer | [u64 optimizer step | named-array section (moments)]
    named-array section: u32 count, then per array:
        u16 name length | utf-8 name | u8 ndim | u32 dims... | f64 raw values

Values are stored as raw float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .errors import FormatError
from .optim import AdamW

MAGIC = b"XCKP"
VERSION = 1


@dataclass
class CheckpointData:
    step: int
    config_text: str
    params: dict[str, np.ndarray]
    optimizer_step: Optional[int] = None
    optimizer_arrays: Optional[dict[str, np.ndarray]] = None


def _pack_arrays(arrays: dict[str, np.ndarray]) -> list[bytes]:
    chunks = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    return chunks


def save_checkpoint(
    path,
    step: int,
    config_text: str,
    params: dict[str, Tensor],
    optimizer: Optional[AdamW] = None,
) -> None:
    chunks = [MAGIC, struct.pack("<HQ", VERSION, step)]
    encoded_cfg = config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(encoded_cfg)))
    chunks.append(encoded_cfg)
    chunks.extend(_pack_arrays({name: p.data for name, p in params.items()}))
    if optimizer is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<BQ", 1, optimizer.step_count))
        chunks.extend(_pack_arrays(optimizer.state_arrays()))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {self.offset}")
        out = self.buf[self.offset:self.offset + size]
        self.offset += size
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_arrays(reader: _Reader) -> dict[str, np.ndarray]:
    (count,) = reader.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).copy()
        arrays[name] = data
    return arrays


def load_checkpoint(path) -> CheckpointData:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic bytes at byte 0: not a checkpoint")
    version, step = reader.unpack("<HQ")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (cfg_len,) = reader.unpack("<I")
    config_text = reader.take(cfg_len).decode("utf-8")
    params = _read_arrays(reader)
    (has_opt,) = reader.unpack("<B")
    opt_step = None
    opt_arrays = None
    if has_opt:
        (opt_step,) = reader.unpack("<Q")
        opt_arrays = _read_arrays(reader)
    return CheckpointData(
        step=step, config_text=config_text, params=params,
        optimizer_step=opt_step, optimizer_arrays=opt_arrays,
    )
