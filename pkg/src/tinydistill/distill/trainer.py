"""Student training on teacher top-k annotations with an optional refresh schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..autodiff import cross_entropy, kd_topk_loss
from ..curation.sample import Sample
from ..errors import ConfigError, DivergenceError, FingerprintMismatch
from ..model.checkpoint import model_fingerprint
from ..model.generate import DecodeConfig
from ..model.tokenizer import require_same_tokenizer
from ..model.transformer import TinyTransformer
from ..sft.packing import PackedBatch, TokenizedSample, next_token_targets, pack_sequences
from ..sft.trainer import StageConfig, Updater, batch_stream, count_steps
from .annotate import AnnotatedDataset, annotate_topk
from .dataset import STRATEGIES, OnPolicyDataset, generate_responses
from .losses import composite_loss

log = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    lambda_kd: float = 0.9
    k: int = 10
    strategy: str = "by-student"
    refreshes: int = 0
    temperature: float = 1.0
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        if isinstance(self.decode, dict):
            self.decode = DecodeConfig(**self.decode)
        if not 0.0 <= self.lambda_kd <= 1.0:
            raise ConfigError(f"lambda_kd must lie in [0, 1], got {self.lambda_kd}", "/lambda_kd")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}", "/k")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "/strategy")
        if self.refreshes < 0:
            raise ConfigError("refreshes must be >= 0", "/refreshes")
        if self.refreshes and self.strategy != "by-student":
            raise ConfigError(f"refresh needs student-generated data, strategy is {self.strategy}",
                              "/refreshes")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive", "/temperature")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decode"] = self.decode.to_dict()
        return d


@dataclass
class DistillStep:
    step: int
    lr: float
    l_ce: float
    l_kd: float
    l_total: float
    grad_norm: float
    tokens_seen: int
    clamped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RefreshEvent:
    step: int
    student: bytes                   # fingerprint of the generating checkpoint
    dataset: OnPolicyDataset
    annotated: AnnotatedDataset

    def to_dict(self) -> dict:
        return {"step": self.step, "student": self.student.hex(),
                "records": len(self.dataset), "skipped": len(self.annotated.skipped)}


@dataclass
class DistillLog:
    steps: list[DistillStep] = field(default_factory=list)
    refreshes: list[RefreshEvent] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def refresh_steps(total: int, refreshes: int) -> list[int]:
    """Completed-step counts after which responses are regenerated."""
    return [i * total // (refreshes + 1) for i in range(1, refreshes + 1)]


@dataclass
class _KDBatch:
    tokens: np.ndarray
    segments: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    support: np.ndarray
    teacher_logits: np.ndarray
    n_tokens: int


class _PackIndex:
    """Packs annotated records and lays their top-k entries onto predicting positions."""

    def __init__(self, annotated: AnnotatedDataset, max_len: int):
        self.k = annotated.k
        self.max_len = max_len
        self.skipped: list[str] = []
        seqs, by_id = [], {}
        for i, r in enumerate(annotated.records):
            n = len(r.prompt) + len(r.response)
            if not r.response or n > max_len:
                self.skipped.append(r.sample_id)
                continue
            key = f"{r.sample_id}:{i}"
            toks = np.asarray(r.prompt + r.response, dtype=np.int64)
            mask = np.zeros(n, dtype=np.int8)
            mask[len(r.prompt):] = 1
            seqs.append(TokenizedSample(key, toks, mask, len(r.prompt)))
            by_id[key] = r
        if not seqs:
            raise ConfigError("no annotated record fits the training context")
        self.records = by_id
        self.packs = pack_sequences(seqs, max_len)

    def make(self, packs: Sequence[PackedBatch]) -> _KDBatch:
        tokens = np.stack([p.tokens for p in packs])
        segments = np.stack([p.segments for p in packs])
        mask = np.stack([p.loss_mask for p in packs])
        targets, _ = next_token_targets(tokens, segments, mask)
        b, t = tokens.shape
        weights = np.zeros((b, t), dtype=np.float64)
        support = np.zeros((b, t, self.k), dtype=np.int64)
        tlogits = np.zeros((b, t, self.k), dtype=np.float32)
        n_seq = sum(len(p.sample_ids) for p in packs)
        for row, p in enumerate(packs):
            for key, off in zip(p.sample_ids, p.offsets):
                r = self.records[key]
                plen, rlen = len(r.prompt), len(r.response)
                # response token n sits at off+plen+n-1 and is predicted one step earlier
                sl = slice(off + plen - 1, off + plen - 1 + rlen)
                weights[row, sl] = 1.0 / (rlen * n_seq)
                support[row, sl] = r.topk_ids
                tlogits[row, sl] = r.topk_logits
        return _KDBatch(tokens, segments, targets, weights, support, tlogits,
                        int(sum(p.n_real for p in packs)))


def _check_provenance(student: TinyTransformer, annotated: AnnotatedDataset,
                      teacher: TinyTransformer | None, cfg: DistillConfig) -> None:
    require_same_tokenizer(student.tokenizer.fingerprint, annotated.tokenizer_fp,
                           "student and annotations")
    if annotated.vocab_size != student.config.vocab_size:
        raise FingerprintMismatch("annotation vocabulary size differs from the student's", 0)
    if annotated.k != cfg.k:
        raise ConfigError(f"annotations hold k={annotated.k}, config asks for k={cfg.k}", "/k")
    if teacher is not None and model_fingerprint(teacher) != annotated.teacher_fp:
        raise FingerprintMismatch("annotations were produced by a different teacher", 0)
    if cfg.strategy == "by-student":
        fp = model_fingerprint(student)
        foreign = [r.sample_id for r in annotated.records if r.generator != fp]
        if foreign:
            raise FingerprintMismatch(
                f"{len(foreign)} by-student record(s) were not generated by this student "
                f"(e.g. {foreign[0]})", 0)


def train_distill(student: TinyTransformer, annotated: AnnotatedDataset, cfg: DistillConfig,
                  stage: StageConfig, seed: int, teacher: TinyTransformer | None = None,
                  queries: Sequence[Sample] | None = None,
                  on_step: Callable[[DistillStep], None] | None = None,
                  ) -> tuple[TinyTransformer, DistillLog]:
    """Train ``student`` in place with (1 - lambda) CE + lambda KD.

    CE targets are the annotated responses themselves. With ``cfg.refreshes``
    = R > 0 the current student regenerates responses for ``queries`` after
    steps floor(i T / (R + 1)), and the teacher re-annotates them in full.
    """
    _check_provenance(student, annotated, teacher, cfg)
    refresh_at = set()
    max_len = min(stage.max_len, student.config.max_len)
    index = _PackIndex(annotated, max_len)
    rows = stage.rows_per_batch
    total = count_steps(len(index.packs), rows, stage.epochs)
    if cfg.refreshes:
        if teacher is None or not queries:
            raise ConfigError("refresh needs the teacher and the query set", "/refreshes")
        if total < cfg.refreshes + 1:
            raise ConfigError(f"{cfg.refreshes} refreshes need at least {cfg.refreshes + 1} "
                              f"optimizer steps, the stage has {total}", "/refreshes")
        refresh_at = set(refresh_steps(total, cfg.refreshes))
    upd = Updater(student, total, stage.peak_lr, stage.min_lr, stage.warmup_steps,
                  stage.weight_decay, stage.clip)
    out = DistillLog(skipped=list(index.skipped))
    stream = batch_stream(index.packs, rows, seed, index.make)
    inv_t = 1.0 / cfg.temperature
    seen = 0
    for _ in range(total):
        batch = next(stream)
        logits = student.forward(batch.tokens, batch.segments)
        l_ce = cross_entropy(logits, batch.targets, batch.weights)
        z = logits * inv_t if cfg.temperature != 1.0 else logits
        tl = batch.teacher_logits * inv_t if cfg.temperature != 1.0 else batch.teacher_logits
        l_kd, clamped = kd_topk_loss(z, batch.support, tl, batch.weights)
        if clamped:
            log.warning("step %d: %d student probabilities on the teacher support clamped at 1e-12",
                        upd.step_count + 1, clamped)
        loss = composite_loss(l_ce, l_kd, cfg.lambda_kd)
        lv = float(loss.data)
        if not math.isfinite(lv):
            raise DivergenceError(f"distillation loss became {lv} at step {upd.step_count + 1}")
        lr, norm = upd.apply(loss, bool(batch.weights.sum() > 0))
        seen += batch.n_tokens
        rec = DistillStep(upd.step_count, lr, float(l_ce.data), float(l_kd.data), lv, norm,
                          seen, clamped)
        out.steps.append(rec)
        if on_step:
            on_step(rec)
        if upd.step_count in refresh_at:
            ev = _refresh(student, teacher, queries, cfg, seed, upd.step_count, annotated)
            out.refreshes.append(ev)
            index = _PackIndex(ev.annotated, max_len)
            out.skipped.extend(index.skipped)
            stream = batch_stream(index.packs, rows, seed + upd.step_count, index.make)
            log.info("refresh after step %d: %d records from student %s",
                     upd.step_count, len(ev.dataset), ev.student.hex()[:12])
    return student, out


def _refresh(student, teacher, queries, cfg: DistillConfig, seed: int, step: int,
             previous: AnnotatedDataset) -> RefreshEvent:
    fp = model_fingerprint(student)
    ds = generate_responses(student, queries, cfg.decode, seed + step, previous.tokenizer_fp)
    ann = annotate_topk(teacher, ds, previous.k)
    return RefreshEvent(step, fp, ds, ann)
