"""Response datasets for distillation (by-label, by-teacher, by-student).

Every record remembers which model produced its response: a checkpoint
hash for generated responses, or the ``label`` marker for ground truth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..curation.sample import Sample
from ..errors import ConfigError, IntegrityError
from ..model.checkpoint import model_fingerprint
from ..model.generate import DecodeConfig, generate_batch
from ..model.tokenizer import EOS, Tokenizer, require_same_tokenizer
from ..model.transformer import TinyTransformer

LABEL_FINGERPRINT = b"label".ljust(32, b"\0")
STRATEGIES = ("by-label", "by-teacher", "by-student")


@dataclass
class OnPolicyRecord:
    sample_id: str
    query: str
    prompt: list[int]
    response: list[int]          # includes EOS when generation finished
    generator: bytes             # 32-byte checkpoint hash or LABEL_FINGERPRINT
    decode: dict | None = None

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "query": self.query, "prompt": self.prompt,
                "response": self.response, "generator": self.generator.hex(), "decode": self.decode}

    @classmethod
    def from_dict(cls, d: dict) -> "OnPolicyRecord":
        return cls(d["sample_id"], d["query"], list(d["prompt"]), list(d["response"]),
                   bytes.fromhex(d["generator"]), d.get("decode"))


@dataclass
class OnPolicyDataset:
    tokenizer_fp: bytes
    records: list[OnPolicyRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": "onpolicy", "tokenizer": self.tokenizer_fp.hex()}) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "OnPolicyDataset":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise IntegrityError(f"{path}: empty on-policy dataset")
        head = json.loads(lines[0])
        if head.get("kind") != "onpolicy":
            raise IntegrityError(f"{path}: missing on-policy header")
        ds = cls(bytes.fromhex(head["tokenizer"]))
        ds.records = [OnPolicyRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        return ds


def label_response(tok: Tokenizer, sample: Sample, with_trace: bool = False) -> list[int]:
    return tok.encode(sample.target_text(with_trace)) + [EOS]


def generate_responses(generator: TinyTransformer, queries: Sequence[Sample],
                       decode_cfg: DecodeConfig = DecodeConfig(), seed: int = 0,
                       tokenizer_fp: bytes | None = None) -> OnPolicyDataset:
    """One generated response per query, stamped with the generator's hash."""
    tok = generator.tokenizer
    if tokenizer_fp is not None:
        require_same_tokenizer(tokenizer_fp, tok.fingerprint, "generator and corpus")
    fp = model_fingerprint(generator)
    prompts = [tok.encode_prompt(s.query) for s in queries]
    gens = generate_batch(generator, prompts, decode_cfg, seed)
    ds = OnPolicyDataset(tok.fingerprint)
    for s, p, g in zip(queries, prompts, gens):
        ds.records.append(OnPolicyRecord(s.id, s.query, p, g.with_eos(), fp, decode_cfg.to_dict()))
    return ds


def build_strategy_dataset(strategy: str, queries: Sequence[Sample], tokenizer: Tokenizer,
                           teacher: TinyTransformer | None = None,
                           student: TinyTransformer | None = None,
                           decode_cfg: DecodeConfig = DecodeConfig(), seed: int = 0,
                           with_trace: bool = False) -> OnPolicyDataset:
    """Responses conditioned on labels, on the teacher, or on the student."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown distillation strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "by-label":
        missing = [s for s in queries if not s.response]
        if missing:
            raise ConfigError(f"by-label distillation needs labels; {len(missing)} sample(s) have none")
        ds = OnPolicyDataset(tokenizer.fingerprint)
        for s in queries:
            ds.records.append(OnPolicyRecord(s.id, s.query, tokenizer.encode_prompt(s.query),
                                             label_response(tokenizer, s, with_trace),
                                             LABEL_FINGERPRINT))
        return ds
    model = teacher if strategy == "by-teacher" else student
    if model is None:
        raise ConfigError(f"{strategy} needs a {'teacher' if strategy == 'by-teacher' else 'student'} model")
    return generate_responses(model, queries, decode_cfg, seed, tokenizer.fingerprint)


def response_lengths(ds: OnPolicyDataset) -> np.ndarray:
    return np.array([len(r.response) for r in ds.records])
