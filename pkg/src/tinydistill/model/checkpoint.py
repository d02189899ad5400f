"""TDCK checkpoint files.

Layout (little-endian)::

    b"TDCK" | version u16 | tokenizer fingerprint (32 bytes)
    | config length u32 | config JSON (utf-8, sorted keys)
    | records: name length u16, name, rank u8, extents u32 x rank, float32 values

Records are written in lexicographic name order. The config JSON carries the
model config, the vocabulary and a provenance note, so a file is loadable on
its own.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .tokenizer import Tokenizer
from .transformer import ModelConfig, TinyTransformer

MAGIC = b"TDCK"
VERSION = 1


def serialize_checkpoint(model: TinyTransformer, note: str | None = None) -> bytes:
    """Checkpoint bytes; ``note`` defaults to the model's provenance note."""
    if note is None:
        note = model.note
    tok = model.tokenizer
    header = {
        "config": model.config.to_dict(),
        "vocab": tok.to_json(),
        "note": note,
    }
    cfg = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), tok.fingerprint, struct.pack("<I", len(cfg)), cfg]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def checkpoint_hash(blob: bytes) -> bytes:
    return hashlib.sha256(blob).digest()


def model_fingerprint(model: TinyTransformer) -> bytes:
    """Hash of the checkpoint bytes the model would serialize to."""
    return checkpoint_hash(serialize_checkpoint(model))


def save_checkpoint(path, model: TinyTransformer, note: str | None = None) -> bytes:
    blob = serialize_checkpoint(model, note)
    Path(path).write_bytes(blob)
    return checkpoint_hash(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise IntegrityError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def deserialize_checkpoint(blob: bytes, dtype=np.float32) -> tuple[TinyTransformer, str]:
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise IntegrityError("bad magic, not a TDCK checkpoint", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}", 4)
    fp = r.take(32, "tokenizer fingerprint")
    (n,) = r.unpack("<I", "config length")
    try:
        header = json.loads(r.take(n, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable config block ({exc})", 42) from exc
    tok = Tokenizer.from_symbols(header["vocab"])
    if tok.fingerprint != fp:
        raise IntegrityError("tokenizer fingerprint does not match stored vocabulary", 6)
    config = ModelConfig(**header["config"])
    params = {}
    while r.pos < len(blob):
        start = r.pos
        (ln,) = r.unpack("<H", "record name length")
        name = r.take(ln, "record name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{rank}I", f"extents of {name}") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        raw = r.take(4 * count, f"values of {name}")
        if name in params:
            raise IntegrityError(f"duplicate record {name!r}", start)
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    model = TinyTransformer(config, tok, dtype=dtype, params=params)
    model.note = header.get("note", "")
    return model, model.note


def load_checkpoint(path, dtype=np.float32) -> TinyTransformer:
    model, _ = deserialize_checkpoint(Path(path).read_bytes(), dtype)
    return model
