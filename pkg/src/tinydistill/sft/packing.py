"""Tokenized samples and first-fit-decreasing sequence packing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..curation.sample import Sample
from ..model.tokenizer import EOS, PAD, Tokenizer


@dataclass
class TokenizedSample:
    id: str
    tokens: np.ndarray      # prompt + target, int64
    loss_mask: np.ndarray   # 1 on supervised (target) tokens
    prompt_len: int

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize_sample(tok: Tokenizer, sample: Sample, with_trace: bool = True,
                    mask_policy: str = "response") -> TokenizedSample:
    prompt = tok.encode_prompt(sample.query)
    target = tok.encode(sample.target_text(with_trace)) + [EOS]
    tokens = np.array(prompt + target, dtype=np.int64)
    mask = np.zeros(len(tokens), dtype=np.int8)
    if mask_policy == "response":
        mask[len(prompt):] = 1
    elif mask_policy == "all":
        mask[1:] = 1
    else:
        raise ValueError(f"unknown loss-mask policy {mask_policy!r}")
    return TokenizedSample(sample.id, tokens, mask, len(prompt))


@dataclass
class PackedBatch:
    """One packed row of exactly ``max_len`` positions."""
    tokens: np.ndarray
    segments: np.ndarray
    loss_mask: np.ndarray
    sample_ids: list[str] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)

    @property
    def n_real(self) -> int:
        return int(sum(self.lengths))


class OversizeSampleError(ValueError):
    pass


def pack_sequences(samples: Sequence[TokenizedSample], max_len: int) -> list[PackedBatch]:
    """First-fit-decreasing bin packing; ties in length are broken by id."""
    for s in samples:
        if len(s) > max_len:
            raise OversizeSampleError(f"sample {s.id} has {len(s)} tokens > max_len {max_len}")
    order = sorted(range(len(samples)), key=lambda i: (-len(samples[i]), samples[i].id, i))
    bins: list[list[int]] = []
    room: list[int] = []
    for i in order:
        n = len(samples[i])
        for b, free in enumerate(room):
            if free >= n:
                bins[b].append(i)
                room[b] -= n
                break
        else:
            bins.append([i])
            room.append(max_len - n)
    packs = []
    for members in bins:
        tokens = np.full(max_len, PAD, dtype=np.int64)
        segments = np.full(max_len, len(members), dtype=np.int64)
        mask = np.zeros(max_len, dtype=np.int8)
        pb = PackedBatch(tokens, segments, mask)
        pos = 0
        for seg, i in enumerate(members):
            s = samples[i]
            n = len(s)
            tokens[pos:pos + n] = s.tokens
            segments[pos:pos + n] = seg
            mask[pos:pos + n] = s.loss_mask
            pb.sample_ids.append(s.id)
            pb.offsets.append(pos)
            pb.lengths.append(n)
            pos += n
        packs.append(pb)
    return packs


def next_token_targets(tokens: np.ndarray, segments: np.ndarray, loss_mask: np.ndarray):
    """Targets and 0/1 weights for next-token prediction over packed rows.

    Position t is supervised when token t+1 is in the same segment and carries
    loss mask 1.
    """
    targets = np.zeros_like(tokens)
    targets[..., :-1] = tokens[..., 1:]
    w = np.zeros(tokens.shape, dtype=np.float64)
    same = segments[..., 1:] == segments[..., :-1]
    w[..., :-1] = (loss_mask[..., 1:] > 0) & same
    return targets, w
