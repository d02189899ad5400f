from __future__ import annotations

import math


def cosine_lr(step: int, warmup: int, total: int, peak: float, min_lr: float) -> float:
    """Linear warmup to ``peak``, then cosine decay to ``min_lr`` at ``total``."""
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if warmup and step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    progress = (step - warmup) / (total - warmup)
    return min_lr + 0.5 * (peak - min_lr) * (1.0 + math.cos(math.pi * progress))
