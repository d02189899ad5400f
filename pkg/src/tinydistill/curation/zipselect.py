"""Compression-ratio guided greedy selection.

The compressor is raw DEFLATE (RFC 1951) from the system zlib at a pinned
level, window and memory level; ``ZLIB_VERSION`` is recorded alongside any
selection so ratios can be reproduced.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .sample import Sample

LEVEL = 9
WBITS = -15   # raw deflate stream, 32 KiB window
MEM_LEVEL = 8
ZLIB_VERSION = zlib.ZLIB_VERSION


def _compressor():
    return zlib.compressobj(LEVEL, zlib.DEFLATED, WBITS, MEM_LEVEL, zlib.Z_DEFAULT_STRATEGY)


def compressed_size(data: bytes) -> int:
    c = _compressor()
    return len(c.compress(data)) + len(c.flush())


def compression_ratio(selected_concat: bytes, candidate: bytes) -> float:
    """compressed size / raw size of ``selected_concat + candidate``.

    Tiny incompressible inputs can exceed 1 because of DEFLATE block overhead.
    """
    if not candidate:
        raise ValueError("candidate must be non-empty")
    data = selected_concat + candidate
    return compressed_size(data) / len(data)


def _sample_bytes(s: Sample) -> bytes:
    return (s.dedup_text() + "\n").encode("utf-8")


def zip_select(pool: Sequence[Sample], budget: int, seed: int = 0,
               max_candidates: int = 256) -> list[Sample]:
    """Greedily add the candidate that compresses worst against the selection.

    At each step the candidate whose concatenation with the already-selected
    bytes has the highest compressed/raw ratio (the most new information) is
    taken; ties go to the smallest id. Pools larger than ``max_candidates``
    are scored on a seeded random subsample per step.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget >= len(pool):
        return sorted(pool, key=lambda s: s.id) if budget else []
    rng = np.random.default_rng(seed)
    payload = [_sample_bytes(s) for s in pool]
    remaining = sorted(range(len(pool)), key=lambda i: (pool[i].id, i))
    base = _compressor()
    out_len = 0
    raw_len = 0
    chosen: list[int] = []
    while len(chosen) < budget and remaining:
        if len(remaining) > max_candidates:
            pick = np.sort(rng.choice(len(remaining), max_candidates, replace=False))
            cands = [remaining[p] for p in pick]
        else:
            cands = list(remaining)
        best, best_ratio = None, -1.0
        for i in cands:
            c = base.copy()
            size = out_len + len(c.compress(payload[i])) + len(c.flush())
            ratio = size / (raw_len + len(payload[i]))
            if ratio > best_ratio:  # candidates are in id order, so ties keep the smaller id
                best, best_ratio = i, ratio
        chosen.append(best)
        remaining.remove(best)
        out_len += len(base.compress(payload[best]))
        raw_len += len(payload[best])
    return [pool[i] for i in chosen]
