"""Greedy and temperature decoding (full recompute per step, no KV cache)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tokenizer import EOS
from .transformer import TinyTransformer


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"
    temperature: float = 1.0
    max_new: int = 32

    def __post_init__(self):
        if self.mode not in ("greedy", "temperature"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.max_new < 1:
            raise ValueError("max_new must be >= 1")
        if self.mode == "temperature" and self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "temperature": self.temperature, "max_new": self.max_new}


@dataclass
class Generation:
    tokens: list[int]  # response tokens, EOS excluded
    finished: bool     # True when EOS was produced

    def with_eos(self) -> list[int]:
        return self.tokens + [EOS] if self.finished else list(self.tokens)


def _pick(logits: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator | None) -> np.ndarray:
    if cfg.mode == "greedy":
        return logits.argmax(axis=-1)  # first maximum, i.e. lowest id on ties
    z = logits.astype(np.float64) / cfg.temperature
    z -= z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=-1)
    return np.minimum((cdf < u[:, None]).sum(axis=-1), p.shape[-1] - 1)


def generate_batch(model: TinyTransformer, prompts: Sequence[Sequence[int]],
                   cfg: DecodeConfig = DecodeConfig(), seed: int = 0,
                   chunk: int = 512) -> list[Generation]:
    """Decode every prompt; prompts of equal length are batched together."""
    ctx = model.config.max_len
    for i, p in enumerate(prompts):
        if len(p) == 0:
            raise ValueError(f"prompt {i} is empty")
        if len(p) > ctx:
            raise ValueError(f"prompt {i} has {len(p)} tokens, context is {ctx}")
    rng = np.random.default_rng(seed) if cfg.mode == "temperature" else None
    results: list[Generation | None] = [None] * len(prompts)
    by_len: dict[int, list[int]] = {}
    for i, p in enumerate(prompts):
        by_len.setdefault(len(p), []).append(i)
    for length in sorted(by_len):
        members = by_len[length]
        for c0 in range(0, len(members), chunk):
            idx = members[c0:c0 + chunk]
            seqs = np.array([list(prompts[i]) for i in idx], dtype=np.int64)
            done = np.zeros(len(idx), dtype=bool)
            steps = min(cfg.max_new, ctx - length)
            out = np.zeros((len(idx), 0), dtype=np.int64)
            for _ in range(steps):
                logits = model.logits(seqs)[:, -1, :]
                nxt = _pick(logits, cfg, rng)
                nxt = np.where(done, EOS, nxt)
                out = np.concatenate([out, nxt[:, None]], axis=1)
                done |= nxt == EOS
                if done.all():
                    break
                seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            for row, i in enumerate(idx):
                toks = out[row].tolist()
                if EOS in toks:
                    results[i] = Generation(toks[: toks.index(EOS)], True)
                else:
                    results[i] = Generation(toks, False)
    return results  # type: ignore[return-value]


def generate(model: TinyTransformer, prompt: Sequence[int], mode: str = "greedy",
             temperature: float = 1.0, max_new: int = 32, seed: int = 0) -> list[int]:
    """Response tokens for one prompt (stops at EOS, which is not returned)."""
    cfg = DecodeConfig(mode=mode, temperature=temperature, max_new=max_new)
    return generate_batch(model, [prompt], cfg, seed)[0].tokens
