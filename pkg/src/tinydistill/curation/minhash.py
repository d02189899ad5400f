"""MinHash signatures over n-gram shingles and banded LSH deduplication."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sample import Sample

# smallest prime above 2**32; with a, x < 2**32 the affine hash fits in uint64
_PRIME = np.uint64(4294967311)
_MAX32 = 2 ** 32


@dataclass(frozen=True)
class MinHashSignature:
    values: np.ndarray  # uint64, one minimum per permutation
    n: int
    seed: int
    unit: str = "word"

    @property
    def num_perm(self) -> int:
        return len(self.values)

    def agreement(self, other: "MinHashSignature") -> float:
        if self.num_perm != other.num_perm or self.seed != other.seed or self.n != other.n:
            raise ValueError("signatures built with different parameters")
        return float(np.mean(self.values == other.values))


def _units(text: str, unit: str) -> list[str]:
    norm = " ".join(text.split())
    if unit == "word":
        return norm.split(" ") if norm else []
    if unit == "char":
        return list(norm)
    raise ValueError(f"unknown shingle unit {unit!r}")


def shingles(text: str, n: int = 3, unit: str = "word") -> set[str]:
    """n-gram shingles after whitespace normalisation."""
    units = _units(text, unit)
    if len(units) < n:
        raise ValueError(f"text has {len(units)} {unit}s, shorter than shingle size {n}: {text[:40]!r}")
    sep = " " if unit == "word" else ""
    return {sep.join(units[i:i + n]) for i in range(len(units) - n + 1)}


def _hash32(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=4).digest(), "little")


def _permutations(num_perm: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = rng.integers(1, _MAX32, num_perm, dtype=np.uint64)
    b = rng.integers(0, _MAX32, num_perm, dtype=np.uint64)
    return a, b


def minhash_signature(text: str, n: int = 3, num_perm: int = 128, seed: int = 1,
                      unit: str = "word", _perms=None) -> MinHashSignature:
    sh = shingles(text, n, unit)
    hv = np.fromiter((_hash32(s) for s in sorted(sh)), dtype=np.uint64, count=len(sh))
    a, b = _perms if _perms is not None else _permutations(num_perm, seed)
    mins = ((a[:, None] * hv[None, :] + b[:, None]) % _PRIME).min(axis=1)
    return MinHashSignature(mins, n, seed, unit)


@dataclass
class DedupResult:
    kept: list[Sample]
    report: list[dict]  # one entry per removed sample
    candidate_pairs: int


def lsh_dedup(corpus: Sequence[Sample], bands: int = 16, rows: int = 8, threshold: float = 0.8,
              n: int = 3, num_perm: int = 128, seed: int = 1, unit: str = "word") -> DedupResult:
    """Remove near-duplicates; survivors are chosen by smallest sample id.

    Band collisions propose candidate pairs, which are confirmed only when
    their signature agreement is at least ``threshold``. A sample is removed
    when it has a confirmed partner with a smaller id that was itself kept.
    """
    if bands * rows != num_perm:
        raise ValueError(f"bands*rows = {bands * rows} must equal num_perm = {num_perm}")
    perms = _permutations(num_perm, seed)
    sigs = [minhash_signature(s.dedup_text(), n, num_perm, seed, unit, perms) for s in corpus]
    mat = np.stack([s.values for s in sigs]) if sigs else np.zeros((0, num_perm), np.uint64)

    candidates: set[tuple[int, int]] = set()
    for band in range(bands):
        buckets: dict[bytes, list[int]] = {}
        block = mat[:, band * rows:(band + 1) * rows]
        for i in range(len(corpus)):
            buckets.setdefault(block[i].tobytes(), []).append(i)
        for members in buckets.values():
            for x in range(len(members)):
                for y in range(x + 1, len(members)):
                    candidates.add((members[x], members[y]))

    partners: dict[int, list[tuple[int, float]]] = {}
    for i, j in candidates:
        agree = float(np.mean(mat[i] == mat[j]))
        if agree >= threshold:
            partners.setdefault(i, []).append((j, agree))
            partners.setdefault(j, []).append((i, agree))

    order = sorted(range(len(corpus)), key=lambda i: (corpus[i].id, i))
    rank = {i: r for r, i in enumerate(order)}
    kept_flags = [False] * len(corpus)
    report = []
    for i in order:
        earlier = [(rank[j], j, a) for j, a in partners.get(i, []) if kept_flags[j] and rank[j] < rank[i]]
        if earlier:
            _, j, agree = min(earlier)
            report.append({"action": "remove", "kept_id": corpus[j].id,
                           "removed_id": corpus[i].id, "agreement": agree})
        else:
            kept_flags[i] = True
    kept = [s for s, k in zip(corpus, kept_flags) if k]
    return DedupResult(kept, report, len(candidates))
