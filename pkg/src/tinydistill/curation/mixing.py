from __future__ import annotations

from typing import Sequence

import numpy as np

from .sample import Sample

REASONING_SHARE = (3, 4)  # 3:1 reasoning to non-reasoning


class ShortfallError(ValueError):
    def __init__(self, pool: str, shortfall: int):
        super().__init__(f"{pool} pool is short by {shortfall} sample(s)")
        self.pool = pool
        self.shortfall = shortfall


def class_quotas(total: int) -> tuple[int, int]:
    num, den = REASONING_SHARE
    n_reason = -(-num * total // den)  # ceil
    return n_reason, total - n_reason


def ratio_sample(reasoning_pool: Sequence[Sample], nonreasoning_pool: Sequence[Sample],
                 total: int, seed: int = 0) -> list[Sample]:
    """ceil(3/4 * total) reasoning samples plus the rest non-reasoning, shuffled."""
    if total < 0:
        raise ValueError("total must be >= 0")
    n_r, n_n = class_quotas(total)
    if len(reasoning_pool) < n_r:
        raise ShortfallError("reasoning", n_r - len(reasoning_pool))
    if len(nonreasoning_pool) < n_n:
        raise ShortfallError("non-reasoning", n_n - len(nonreasoning_pool))
    rng = np.random.default_rng(seed)
    r_idx = rng.choice(len(reasoning_pool), n_r, replace=False) if n_r else []
    n_idx = rng.choice(len(nonreasoning_pool), n_n, replace=False) if n_n else []
    mixed = [reasoning_pool[i] for i in r_idx] + [nonreasoning_pool[i] for i in n_idx]
    return [mixed[i] for i in rng.permutation(len(mixed))]
