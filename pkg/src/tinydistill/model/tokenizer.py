"""Character-level tokenizer shared by teacher and student."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>", "<unk>")
PAD, BOS, EOS, SEP, UNK = range(len(SPECIALS))


@dataclass(frozen=True)
class Tokenizer:
    symbols: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.symbols[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    pad_id = PAD
    bos_id = BOS
    eos_id = EOS
    sep_id = SEP
    unk_id = UNK

    @property
    def vocab_size(self) -> int:
        return len(self.symbols)

    @property
    def fingerprint(self) -> bytes:
        """SHA-256 of the ordered vocabulary (32 bytes)."""
        blob = json.dumps(list(self.symbols), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).digest()

    def encode(self, text: str) -> list[int]:
        return [self._index.get(ch, UNK) for ch in text]

    def decode(self, ids: Iterable[int], keep_special: bool = False) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < len(SPECIALS) and not keep_special:
                continue
            out.append(self.symbols[i])
        return "".join(out)

    def encode_prompt(self, query: str) -> list[int]:
        return [BOS] + self.encode(query) + [SEP]

    def to_json(self) -> list[str]:
        return list(self.symbols[len(SPECIALS):])

    @classmethod
    def from_symbols(cls, chars: Sequence[str]) -> "Tokenizer":
        return cls(SPECIALS + tuple(chars))


def build_tokenizer(corpus: Iterable[str], extra_symbols: Iterable[str] = ()) -> Tokenizer:
    """Deterministic vocabulary: reserved ids, then every corpus character sorted."""
    chars: set[str] = set()
    n = 0
    for text in corpus:
        chars.update(text)
        n += 1
    if n == 0:
        raise ValueError("cannot build a tokenizer from an empty corpus")
    chars.update(extra_symbols)
    return Tokenizer.from_symbols(sorted(chars))


def require_same_tokenizer(a: bytes, b: bytes, what: str = "models") -> None:
    from ..errors import FingerprintMismatch

    if a != b:
        raise FingerprintMismatch(
            f"tokenizer fingerprint mismatch between {what}: {a.hex()[:16]} != {b.hex()[:16]}")
