"""Self-contained model checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes  "GORACLE1"
    version   uint32
    config    uint32 length + UTF-8 JSON of ModelConfig plus the
              serialization field mask the model was trained with
    vocab     uint32 length + UTF-8 text, one token per line
    tensors   uint32 count, then per tensor:
                uint16 name length + UTF-8 name
                uint8 ndim, ndim * uint32 dims
                float64 little-endian payload
    crc32     uint32 over everything before it

Tensors are stored in float64 regardless of the runtime dtype so a
checkpoint round-trips bit-exactly and never depends on side files.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .network import ModelConfig, ModelParams
from .tokenizer import ALL_FIELDS, Field, FieldSet, Vocabulary

MAGIC = b"GORACLE1"
CHECKPOINT_VERSION = 1


class VersionMismatch(Exception):
    pass


class CorruptCheckpoint(Exception):
    pass


def save_checkpoint(params: ModelParams, cfg: ModelConfig, vocab: Vocabulary,
                    fields: FieldSet = ALL_FIELDS) -> bytes:
    buf = bytearray()
    buf.extend(MAGIC)
    buf.extend(struct.pack("<I", CHECKPOINT_VERSION))

    blob = cfg.to_dict()
    # The field mask travels with the model: classifying with a
    # different serialization than training would be silently wrong.
    blob["fields"] = [f.value for f in Field if f in fields]
    config_raw = json.dumps(blob, sort_keys=True).encode("utf-8")
    buf.extend(struct.pack("<I", len(config_raw)))
    buf.extend(config_raw)

    vocab_raw = ("\n".join(vocab.tokens()) + "\n").encode("utf-8")
    buf.extend(struct.pack("<I", len(vocab_raw)))
    buf.extend(vocab_raw)

    buf.extend(struct.pack("<I", len(params.tensors)))
    for name in params.names():
        tensor = params[name]
        raw_name = name.encode("utf-8")
        buf.extend(struct.pack("<H", len(raw_name)))
        buf.extend(raw_name)
        buf.extend(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.extend(struct.pack("<I", dim))
        buf.extend(np.ascontiguousarray(tensor, dtype="<f8").tobytes())

    buf.extend(struct.pack("<I", zlib.crc32(bytes(buf))))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(
                f"truncated: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(
    data: bytes,
) -> tuple[ModelParams, ModelConfig, Vocabulary, FieldSet]:
    if len(data) < len(MAGIC) + 8:
        raise CorruptCheckpoint(f"file too short ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"bad magic {data[:8]!r}")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise CorruptCheckpoint(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    r = _Reader(data[:-4])
    r.pos = len(MAGIC)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    try:
        blob = json.loads(r.take(r.u32()).decode("utf-8"))
        field_names = blob.pop("fields", [f.value for f in Field])
        fields = frozenset(Field(name) for name in field_names)
        cfg = ModelConfig.from_dict(blob)
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"bad config block: {exc}") from None

    vocab_text = r.take(r.u32()).decode("utf-8")
    lines = vocab_text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        vocab = Vocabulary(token_to_id={tok: i for i, tok in enumerate(lines)})
    except ValueError as exc:
        raise CorruptCheckpoint(f"bad vocabulary block: {exc}") from None

    dtype = np.dtype(cfg.dtype)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u8()))
        count = 1
        for dim in shape:
            count *= dim
        raw = r.take(count * 8)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(dtype)
    if r.pos != len(r.data):
        raise CorruptCheckpoint(f"{len(r.data) - r.pos} trailing bytes after tensors")
    return ModelParams(tensors), cfg, vocab, fields


def save_checkpoint_file(path: str, params: ModelParams, cfg: ModelConfig,
                         vocab: Vocabulary, fields: FieldSet = ALL_FIELDS) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(params, cfg, vocab, fields))


def load_checkpoint_file(
    path: str,
) -> tuple[ModelParams, ModelConfig, Vocabulary, FieldSet]:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())
