"""TKLG annotation files.

Layout (little-endian)::

    b"TKLG" | version u16 | tokenizer fp (32) | teacher fp (32) | k u16 | vocab u32
    records until EOF:
        sample-id hash (16) | generator fp (32) | prompt len u32 | response len u32
        | token ids u32 x (prompt + response) | (token id u32, logit f32) x response len x k
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .annotate import AnnotatedDataset, AnnotatedRecord

MAGIC = b"TKLG"
VERSION = 1
_HEADER = struct.Struct("<4sH32s32sHI")
_REC_HEAD = struct.Struct("<16s32sII")
_PAIR = np.dtype([("id", "<u4"), ("logit", "<f4")])


def encode_annotations(ds: AnnotatedDataset) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, ds.tokenizer_fp, ds.teacher_fp, ds.k, ds.vocab_size)]
    for r in ds.records:
        parts.append(_REC_HEAD.pack(bytes.fromhex(r.sample_id), r.generator,
                                    len(r.prompt), len(r.response)))
        parts.append(np.asarray(r.prompt + r.response, dtype="<u4").tobytes())
        pairs = np.empty(r.topk_ids.shape, dtype=_PAIR)
        pairs["id"] = r.topk_ids
        pairs["logit"] = r.topk_logits
        parts.append(pairs.tobytes())
    return b"".join(parts)


def write_annotations(path, ds: AnnotatedDataset) -> bytes:
    blob = encode_annotations(ds)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).digest()


def decode_annotations(blob: bytes) -> AnnotatedDataset:
    if len(blob) < _HEADER.size:
        raise IntegrityError("truncated TKLG header", len(blob))
    magic, version, tok_fp, teacher_fp, k, vocab = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise IntegrityError("bad magic, not a TKLG file", 0)
    if version != VERSION:
        raise IntegrityError(f"unsupported TKLG version {version}", 4)
    ds = AnnotatedDataset(tok_fp, teacher_fp, k, vocab)
    pos = _HEADER.size
    while pos < len(blob):
        start = pos
        if pos + _REC_HEAD.size > len(blob):
            raise IntegrityError(f"truncated record header (record {len(ds.records)})", pos)
        sid, gen, plen, rlen = _REC_HEAD.unpack_from(blob, pos)
        pos += _REC_HEAD.size
        ntok = 4 * (plen + rlen)
        npair = _PAIR.itemsize * rlen * k
        if pos + ntok + npair > len(blob):
            raise IntegrityError(
                f"truncated record {len(ds.records)} (needs {ntok + npair} bytes, "
                f"{len(blob) - pos} left)", pos)
        toks = np.frombuffer(blob, dtype="<u4", count=plen + rlen, offset=pos).tolist()
        pos += ntok
        pairs = np.frombuffer(blob, dtype=_PAIR, count=rlen * k, offset=pos).reshape(rlen, k)
        if np.any(np.diff(pairs["logit"], axis=1) > 0):
            raise IntegrityError(f"record {len(ds.records)}: logits not descending", pos)
        if np.any(pairs["id"] >= vocab):
            raise IntegrityError(f"record {len(ds.records)}: token id outside vocabulary", pos)
        pos += npair
        if max(toks, default=0) >= vocab:
            raise IntegrityError(f"record {len(ds.records)}: sequence token outside vocabulary", start)
        ds.records.append(AnnotatedRecord(sid.hex(), gen, toks[:plen], toks[plen:],
                                          pairs["id"].astype(np.uint32),
                                          pairs["logit"].astype(np.float32)))
    return ds


def read_annotations(path) -> AnnotatedDataset:
    return decode_annotations(Path(path).read_bytes())
