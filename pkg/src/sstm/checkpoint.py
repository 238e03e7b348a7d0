"""Versioned binary checkpoints for (weights, config).

Layout, all little-endian::

    b"SSTMCKPT"  u32 version
    u32 line count, then per line: u32 length + UTF-8 "key=value"
    per tensor: u32 name length + UTF-8 name, u32 rank, rank x u64 dims, float32 data
    u64 record count, u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ConfigError, ModelConfig, ModelWeights, param_shapes

MAGIC = b"SSTMCKPT"
VERSION = 1
FOOTER = struct.Struct("<QI")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(weights: ModelWeights, config: ModelConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    lines = config.to_lines()
    parts.append(struct.pack("<I", len(lines)))
    parts.extend(_text(line) for line in lines)
    seen = set()
    for name, t in weights.items():
        if name in seen:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        seen.add(name)
        data = np.ascontiguousarray(t.data, dtype="<f4")
        parts.append(_text(name))
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    body = b"".join(parts) + struct.pack("<Q", len(weights))
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, raw: bytes, end: int) -> None:
        self.raw, self.pos, self.end = raw, 0, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedCheckpointError(f"checkpoint ends inside a record at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"invalid UTF-8 in checkpoint: {exc}") from None


def decode_checkpoint(raw: bytes) -> tuple[ModelWeights, ModelConfig]:
    if len(raw) < len(MAGIC):
        raise TruncatedCheckpointError("checkpoint shorter than its magic")
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not an SSTM checkpoint (bad magic)")
    if len(raw) < len(MAGIC) + 4 + FOOTER.size:
        raise TruncatedCheckpointError("checkpoint shorter than header plus footer")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {VERSION}")

    footer_at = len(raw) - FOOTER.size
    reader = _Reader(raw, footer_at)
    reader.pos = len(MAGIC) + 4
    lines = [reader.text() for _ in range(reader.u32())]
    records = []
    while reader.pos < footer_at:
        name = reader.text()
        rank = reader.u32()
        if rank > 8:
            raise CheckpointError(f"tensor {name!r} has implausible rank {rank}")
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        records.append((name, data))
    count, crc = FOOTER.unpack_from(raw, footer_at)
    if zlib.crc32(raw[: footer_at + 8]) & 0xFFFFFFFF != crc:
        raise ChecksumError("checkpoint CRC mismatch (corrupt file)")
    if count != len(records):
        raise TruncatedCheckpointError(f"footer lists {count} tensors, found {len(records)}")

    try:
        config = ModelConfig.from_lines(lines)
    except (ConfigError, ValueError) as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from None
    weights = ModelWeights()
    for name, data in records:
        if name in weights:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        weights.add(name, Tensor(data, requires_grad=True))
    expected = param_shapes(config)
    if weights.shapes() != expected:
        missing = set(expected) ^ set(weights)
        raise CheckpointError(f"tensors do not match the stored config (differing names: {sorted(missing)[:5]})")
    return weights, config


def save_checkpoint(weights: ModelWeights, config: ModelConfig, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(weights, config))


def load_checkpoint(path: str | Path) -> tuple[ModelWeights, ModelConfig]:
    return decode_checkpoint(Path(path).read_bytes())
