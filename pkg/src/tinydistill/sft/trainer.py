"""Masked cross-entropy fine-tuning with AdamW, clipping and a cosine schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from ..autodiff import AdamW, clip_gradients, cross_entropy, gradients
from ..curation.sample import Sample
from ..errors import ConfigError, DivergenceError
from ..model.transformer import TinyTransformer
from .packing import PackedBatch, next_token_targets, pack_sequences, tokenize_sample
from .schedule import cosine_lr

log = logging.getLogger(__name__)

WEIGHT_DECAY = 0.1
CLIP_THRESHOLD = 1.0


@dataclass
class StageConfig:
    epochs: int = 10
    tokens_per_batch: int = 8192
    peak_lr: float = 1e-3
    min_lr: float = 1e-4
    warmup_steps: int = 200
    max_len: int = 64
    mask_policy: str = "response"
    with_trace: bool = True
    weight_decay: float = WEIGHT_DECAY
    clip: float = CLIP_THRESHOLD
    corpus: str | None = None

    def __post_init__(self):
        if not (self.peak_lr >= self.min_lr > 0):
            raise ConfigError("require peak_lr >= min_lr > 0", "/peak_lr")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", "/epochs")
        if self.tokens_per_batch < self.max_len:
            raise ConfigError("tokens_per_batch must hold at least one packed row",
                              "/tokens_per_batch")

    @property
    def rows_per_batch(self) -> int:
        return max(1, self.tokens_per_batch // self.max_len)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown stage field(s) {unknown}")
        return cls(**d)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    grad_norm: float
    tokens_seen: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    tokens: np.ndarray
    segments: np.ndarray
    targets: np.ndarray
    weights: np.ndarray   # per-position loss weights (sum over batch == 1 unless empty)
    n_tokens: int


def stack_packs(packs: Sequence[PackedBatch]) -> Batch:
    tokens = np.stack([p.tokens for p in packs])
    segments = np.stack([p.segments for p in packs])
    mask = np.stack([p.loss_mask for p in packs])
    targets, w = next_token_targets(tokens, segments, mask)
    total = w.sum()
    if total > 0:
        w = w / total
    return Batch(tokens, segments, targets, w, int(sum(p.n_real for p in packs)))


def batch_stream(packs: Sequence[PackedBatch], rows: int, seed: int,
                 make: Callable[[Sequence[PackedBatch]], Batch] = stack_packs) -> Iterator[Batch]:
    """Endless batches; the pack order is re-permuted (seeded) every epoch."""
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(len(packs))
        for i in range(0, len(order), rows):
            yield make([packs[j] for j in order[i:i + rows]])


class Updater:
    """Owns the optimizer for one model: clip, schedule and AdamW step."""

    def __init__(self, model: TinyTransformer, total_steps: int, peak_lr: float, min_lr: float,
                 warmup: int, weight_decay: float = WEIGHT_DECAY, clip: float = CLIP_THRESHOLD):
        if total_steps < 1:
            raise ConfigError("stage has no optimizer steps")
        if warmup >= total_steps:
            raise ConfigError(f"warmup ({warmup}) must be smaller than total steps ({total_steps})",
                              "/warmup_steps")
        self.model = model
        self.params = model.parameters()
        self.opt = AdamW(self.params, lr=peak_lr, weight_decay=weight_decay,
                         decay_mask=model.decay_mask())
        self.total = total_steps
        self.peak, self.min_lr, self.warmup = peak_lr, min_lr, warmup
        self.clip = clip
        self.step_count = 0

    def apply(self, loss, has_signal: bool) -> tuple[float, float]:
        """Backprop ``loss`` and step; returns (lr, pre-clip grad norm)."""
        self.step_count += 1
        lr = cosine_lr(self.step_count, self.warmup, self.total, self.peak, self.min_lr)
        if not has_signal:
            return lr, 0.0
        grads = gradients(loss, self.params)
        grads, norm = clip_gradients(grads, self.clip)
        if not math.isfinite(norm):
            raise DivergenceError(f"non-finite gradient norm at step {self.step_count}")
        self.opt.state.lr = lr
        self.opt.step(grads)
        return lr, norm


def masked_ce(model: TinyTransformer, batch: Batch):
    logits = model.forward(batch.tokens, batch.segments)
    return cross_entropy(logits, batch.targets, batch.weights)


def count_steps(n_packs: int, rows: int, epochs: int) -> int:
    return epochs * math.ceil(n_packs / rows)


def run_stage(model: TinyTransformer, stage: StageConfig, corpus: Sequence[Sample], seed: int,
              on_step: Callable[[StepRecord], None] | None = None) -> tuple[TinyTransformer, list[StepRecord]]:
    """Train ``model`` in place on ``corpus``; returns the model and its step log."""
    tok = model.tokenizer
    if len(corpus) == 0:
        raise ConfigError("stage corpus is empty")
    tokenized = [tokenize_sample(tok, s, stage.with_trace, stage.mask_policy) for s in corpus]
    max_len = min(stage.max_len, model.config.max_len)
    packs = pack_sequences(tokenized, max_len)
    rows = stage.rows_per_batch
    total = count_steps(len(packs), rows, stage.epochs)
    upd = Updater(model, total, stage.peak_lr, stage.min_lr, stage.warmup_steps,
                  stage.weight_decay, stage.clip)
    stream = batch_stream(packs, rows, seed)
    logs: list[StepRecord] = []
    seen = 0
    for _ in range(total):
        batch = next(stream)
        has_signal = bool(batch.weights.sum() > 0)
        loss = masked_ce(model, batch)
        lv = float(loss.data)
        if not math.isfinite(lv):
            raise DivergenceError(
                f"loss became {lv} at step {upd.step_count + 1} "
                f"(last lr {logs[-1].lr if logs else 0.0:.3g}, last grad norm "
                f"{logs[-1].grad_norm if logs else 0.0:.3g})")
        lr, norm = upd.apply(loss, has_signal)
        seen += batch.n_tokens
        rec = StepRecord(upd.step_count, lr, lv, norm, seen)
        logs.append(rec)
        if on_step:
            on_step(rec)
    log.info("stage done: %d steps, final loss %.4f", total, logs[-1].loss)
    return model, logs
