"""Training samples and their JSON Lines representation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

REASONING = "reasoning"
NON_REASONING = "non-reasoning"
TASK_CLASSES = (REASONING, NON_REASONING)

# separates an optional reasoning trace from the final answer
ANSWER_MARK = "#"


def sample_id(query: str, response: str) -> str:
    """Content hash of (query, response): 16 bytes, hex encoded."""
    h = hashlib.sha256(query.encode("utf-8") + b"\x1f" + response.encode("utf-8"))
    return h.hexdigest()[:32]


@dataclass(frozen=True)
class Sample:
    query: str
    response: str
    task_class: str
    reasoning_trace: str | None = None
    attributes: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.task_class not in TASK_CLASSES:
            raise ValueError(f"task_class must be one of {TASK_CLASSES}, got {self.task_class!r}")

    @property
    def id(self) -> str:
        return sample_id(self.query, self.response)

    def without_trace(self) -> "Sample":
        return replace(self, reasoning_trace=None)

    def target_text(self, with_trace: bool = True) -> str:
        """Supervised text after the prompt: ``[trace] # answer``."""
        trace = self.reasoning_trace if with_trace and self.reasoning_trace else ""
        return f"{trace}{ANSWER_MARK}{self.response}"

    def dedup_text(self) -> str:
        parts = [self.query, self.reasoning_trace or "", self.response]
        return " ".join(p for p in parts if p)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "response": self.response,
            "reasoning_trace": self.reasoning_trace,
            "task_class": self.task_class,
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        s = cls(query=d["query"], response=d["response"], task_class=d["task_class"],
                reasoning_trace=d.get("reasoning_trace"), attributes=dict(d.get("attributes") or {}))
        if "id" in d and d["id"] != s.id:
            raise ValueError(f"sample id {d['id']} does not match its content hash {s.id}")
        return s


def extract_answer(text: str) -> str | None:
    """Text after the last answer marker, or None when the marker is missing."""
    if ANSWER_MARK not in text:
        return None
    return text.rsplit(ANSWER_MARK, 1)[1]


def write_jsonl(path, samples: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def iter_jsonl(path) -> Iterator[Sample]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield Sample.from_dict(json.loads(line))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{Path(path).name}:{lineno}: {exc}") from exc


def read_jsonl(path) -> list[Sample]:
    return list(iter_jsonl(path))
