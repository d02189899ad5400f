"""Exact-match accuracy, teacher-forced perplexity and per-token KL to a teacher."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import log_softmax_np
from ..curation.sample import NON_REASONING, REASONING, Sample, extract_answer
from ..model.generate import DecodeConfig, generate_batch
from ..model.tokenizer import EOS, require_same_tokenizer
from ..model.transformer import TinyTransformer
from .tasks import solve


@dataclass
class EvalResult:
    accuracy: float
    n: int
    extraction_failures: int
    perplexity: float
    kl_mean: float | None = None
    kl_median: float | None = None
    per_task: dict[str, float] = field(default_factory=dict)
    per_class: dict[str, float] = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    generations: list[dict] = field(default_factory=list)
    kl_per_sample: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("generations")
        d.pop("kl_per_sample")
        return d

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(**d)


def _kind(s: Sample) -> str:
    return str(s.attributes.get("subcategory", "unknown"))


def score_generation(query: str, text: str) -> tuple[bool, bool]:
    """(correct, extracted) for one decoded generation."""
    ans = extract_answer(text)
    if ans is None:
        return False, False
    return ans == solve(query), True


def rescore(generations: Sequence[dict]) -> float:
    """Accuracy recomputed from stored generations with the task oracle."""
    if not generations:
        return 0.0
    return float(np.mean([score_generation(g["query"], g["text"])[0] for g in generations]))


def _teacher_forced(model: TinyTransformer, test: Sequence[Sample], chunk: int = 256):
    """Response-position log-probabilities on the ground-truth fast-format answers.

    Yields (sample index, response token ids, log-softmax rows (L, V)).
    """
    tok = model.tokenizer
    seqs = []
    for i, s in enumerate(test):
        prompt = tok.encode_prompt(s.query)
        resp = tok.encode(s.target_text(False)) + [EOS]
        seqs.append((i, prompt, resp))
    by_len: dict[int, list[int]] = {}
    for j, (_, p, r) in enumerate(seqs):
        by_len.setdefault(len(p) + len(r) - 1, []).append(j)
    for length in sorted(by_len):
        if length > model.config.max_len:
            raise ValueError(f"test sequence of {length} tokens exceeds context {model.config.max_len}")
        members = by_len[length]
        for c0 in range(0, len(members), chunk):
            idx = members[c0:c0 + chunk]
            ids = np.array([(seqs[j][1] + seqs[j][2])[:-1] for j in idx], dtype=np.int64)
            logp = log_softmax_np(model.logits(ids).astype(np.float64))
            for row, j in enumerate(idx):
                i, p, r = seqs[j]
                yield i, r, logp[row, len(p) - 1:len(p) - 1 + len(r)]


def per_token_kl(student: TinyTransformer, teacher: TinyTransformer,
                 test: Sequence[Sample]) -> np.ndarray:
    """Mean full-vocabulary KL(teacher || student) over each test response."""
    require_same_tokenizer(student.tokenizer.fingerprint, teacher.tokenizer.fingerprint,
                           "student and teacher")
    t_rows = {i: lp for i, _, lp in _teacher_forced(teacher, test)}
    out = np.zeros(len(test))
    for i, _, lq in _teacher_forced(student, test):
        lp = t_rows[i]
        out[i] = float(np.mean(np.sum(np.exp(lp) * (lp - lq), axis=-1)))
    return np.maximum(out, 0.0)


def evaluate(model: TinyTransformer, test: Sequence[Sample],
             decode_cfg: DecodeConfig = DecodeConfig(), teacher: TinyTransformer | None = None,
             seed: int = 0) -> EvalResult:
    """Decode every test query and score it by exact match after the answer marker."""
    if not test:
        raise ValueError("empty test set")
    tok = model.tokenizer
    alphabet = set(tok.symbols)
    missing = sorted({c for s in test for c in s.query + s.response if c not in alphabet})
    if missing:
        raise ValueError(f"tokenizer does not cover test symbols {missing}")
    prompts = [tok.encode_prompt(s.query) for s in test]
    gens = generate_batch(model, prompts, decode_cfg, seed)
    correct = np.zeros(len(test), dtype=bool)
    failures = 0
    records = []
    for i, (s, g) in enumerate(zip(test, gens)):
        text = tok.decode(g.tokens)
        ok, extracted = score_generation(s.query, text)
        correct[i] = ok
        failures += not extracted
        records.append({"sample_id": s.id, "query": s.query, "task": _kind(s), "text": text,
                        "finished": g.finished, "correct": bool(ok)})
    per_task = {}
    for kind in sorted({_kind(s) for s in test}):
        sel = [i for i, s in enumerate(test) if _kind(s) == kind]
        per_task[kind] = float(correct[sel].mean())
    per_class = {}
    for cls in (REASONING, NON_REASONING):
        sel = [i for i, s in enumerate(test) if s.task_class == cls]
        if sel:
            per_class[cls] = float(correct[sel].mean())
    nll, count = 0.0, 0
    for _, r, lp in _teacher_forced(model, test):
        nll -= float(lp[np.arange(len(r)), r].sum())
        count += len(r)
    ppl = math.exp(nll / count)
    flags = []
    if not math.isfinite(ppl):
        flags.append("perplexity not finite")
    res = EvalResult(float(correct.mean()), len(test), failures, ppl, per_task=per_task,
                     per_class=per_class, decode=decode_cfg.to_dict(), flags=flags,
                     generations=records)
    if teacher is not None:
        kl = per_token_kl(model, teacher, test)
        if not np.all(np.isfinite(kl)):
            res.flags.append("kl not finite")
        res.kl_per_sample = [float(x) for x in kl]
        res.kl_mean = float(kl.mean())
        res.kl_median = float(np.median(kl))
    return res
