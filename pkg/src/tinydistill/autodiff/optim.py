"""AdamW with decoupled weight decay, and global-norm gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    decay_mask: Sequence[bool] | None = None,
) -> tuple[list[np.ndarray], OptimizerState]:
    """One AdamW update; returns new parameter arrays and mutates ``state``.

    Weight decay is applied to the parameter directly (``p -= lr * wd * p``),
    never folded into the gradient.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} != grad shape {g.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ValueError("optimizer state does not match parameter shapes")
    if decay_mask is None:
        decay_mask = [True] * len(params)

    state.t += 1
    b1, b2, lr = state.beta1, state.beta2, state.lr
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        new = p
        if decay_mask[i] and state.weight_decay:
            new = new * (1.0 - lr * state.weight_decay)
        step = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        out.append((new - lr * step).astype(p.dtype))
    return out, state


class AdamW:
    """Stateful wrapper that updates ``Tensor`` parameters in place."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.95), eps=1e-8,
                 weight_decay=0.1, decay_mask: Sequence[bool] | None = None):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                    weight_decay=weight_decay)
        self.decay_mask = list(decay_mask) if decay_mask is not None else None

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, _ = adamw_step([p.data for p in self.params], grads, self.state, self.decay_mask)
        for p, d in zip(self.params, new):
            p.data = d


def global_norm(grads: Sequence[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(grads: Sequence[np.ndarray], threshold: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by ``threshold / norm`` when the global L2 norm exceeds it.

    Returns the (possibly scaled) gradients and the pre-clip global norm.
    """
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        return [(g * scale).astype(g.dtype) for g in grads], norm
    return list(grads), norm
