"""Teacher top-k logit annotation of response datasets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..model.checkpoint import model_fingerprint
from ..model.tokenizer import require_same_tokenizer
from ..model.transformer import TinyTransformer
from .dataset import OnPolicyDataset


@dataclass(frozen=True)
class TopKRecord:
    position: int            # 1-based index into the response
    token_ids: np.ndarray    # (k,) distinct ids
    logits: np.ndarray       # (k,) raw teacher logits, descending
    teacher: bytes


@dataclass
class AnnotatedRecord:
    sample_id: str
    generator: bytes
    prompt: list[int]
    response: list[int]
    topk_ids: np.ndarray      # (len(response), k) uint32
    topk_logits: np.ndarray   # (len(response), k) float32

    def position(self, n: int, teacher: bytes = b"") -> TopKRecord:
        return TopKRecord(n, self.topk_ids[n - 1], self.topk_logits[n - 1], teacher)


@dataclass
class AnnotatedDataset:
    tokenizer_fp: bytes
    teacher_fp: bytes
    k: int
    vocab_size: int
    records: list[AnnotatedRecord] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def topk_records(self) -> Iterator[tuple[AnnotatedRecord, TopKRecord]]:
        for rec in self.records:
            for n in range(1, len(rec.response) + 1):
                yield rec, rec.position(n, self.teacher_fp)


def select_topk(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k along the last axis: logit descending, ties by ascending id."""
    order = np.argsort(-logits, axis=-1, kind="stable")[..., :k]
    return order.astype(np.uint32), np.take_along_axis(logits, order, axis=-1).astype(np.float32)


def annotate_topk(teacher: TinyTransformer, ds: OnPolicyDataset, k: int = 10,
                  chunk: int = 256) -> AnnotatedDataset:
    """Store the teacher's k largest next-token logits at every response position.

    Position n is scored from prompt + response[:n-1] only; logits are kept raw.
    Records that do not fit the teacher context, or have empty responses, are
    skipped and reported.
    """
    require_same_tokenizer(teacher.tokenizer.fingerprint, ds.tokenizer_fp, "teacher and dataset")
    vocab = teacher.config.vocab_size
    if not 2 <= k <= vocab:
        raise ValueError(f"k must be in [2, {vocab}], got {k}")
    out = AnnotatedDataset(ds.tokenizer_fp, model_fingerprint(teacher), k, vocab)
    ctx = teacher.config.max_len
    by_len: dict[int, list[int]] = {}
    for i, r in enumerate(ds.records):
        total = len(r.prompt) + len(r.response)
        if not r.response:
            out.skipped.append({"sample_id": r.sample_id, "reason": "empty response"})
        elif total - 1 > ctx:
            out.skipped.append({"sample_id": r.sample_id,
                                "reason": f"{total - 1} tokens exceed teacher context {ctx}"})
        else:
            by_len.setdefault(total - 1, []).append(i)
    results: dict[int, AnnotatedRecord] = {}
    for length in sorted(by_len):
        members = by_len[length]
        for c0 in range(0, len(members), chunk):
            idx = members[c0:c0 + chunk]
            seqs = np.array([(ds.records[i].prompt + ds.records[i].response)[:-1] for i in idx],
                            dtype=np.int64)
            logits = teacher.logits(seqs)
            for row, i in enumerate(idx):
                r = ds.records[i]
                p = len(r.prompt)
                pos_logits = logits[row, p - 1:p - 1 + len(r.response)]
                ids, vals = select_topk(pos_logits, k)
                results[i] = AnnotatedRecord(r.sample_id, r.generator, list(r.prompt),
                                             list(r.response), ids, vals)
    out.records = [results[i] for i in sorted(results)]
    return out
