"""Fused differentiable primitives used by the transformer and the losses.

Each primitive computes its forward in numpy and carries a hand-derived
backward. ``softmax`` and ``kl_divergence`` also have plain-array variants
that the data and evaluation code call outside of any graph.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor


class NonFiniteInputError(ValueError):
    pass


class InfiniteDivergenceError(ValueError):
    """Raised when p puts mass where q has none."""


# -- plain-array helpers -----------------------------------------------------

def softmax(logits, axis: int = -1) -> np.ndarray:
    """Shift-stable softmax of a real array along ``axis``."""
    x = np.asarray(logits, dtype=np.float64 if np.asarray(logits).dtype.kind in "iu" else None)
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(x.reshape(-1)))[:5]
        raise NonFiniteInputError(f"softmax input has non-finite entries at flat indices {bad.tolist()}")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, with 0 * log(0 / q) taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: p{p.shape} vs q{q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be non-negative")
    support = p > 0
    if np.any(q[support] == 0):
        idx = np.flatnonzero(support & (q == 0))
        raise InfiniteDivergenceError(f"q is zero where p is positive (indices {idx.tolist()[:5]})")
    ps, qs = p[support], q[support]
    val = float(np.sum(ps * (np.log(ps) - np.log(qs))))
    # rounding can produce a tiny negative value when p == q
    return max(val, 0.0)


# -- differentiable ops ------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)

    def bw(g):
        x._accumulate(g * mask)

    return Tensor._make(out, (x,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d * d * d)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        local = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner
        x._accumulate(g * local)

    return Tensor._make(out.astype(d.dtype), (x,), bw)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out = weight.data[ids]

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        weight._accumulate(full)

    return Tensor._make(out, (weight,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gamma.data
            n = d.shape[-1]
            dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                         - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
            x._accumulate(dx)

    return Tensor._make(out.astype(d.dtype), (x, gamma, beta), bw)


def softmax_t(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get zero mass."""
    d = x.data
    if mask is not None:
        d = np.where(mask, d, -np.inf)
    z = d - d.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return Tensor._make(p.astype(x.dtype), (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    d = x.data
    z = d - d.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def bw(g):
        p = np.exp(out)
        x._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return Tensor._make(out, (x,), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of token-level cross-entropies.

    ``logits`` has shape (..., V); ``targets`` and ``weights`` match the
    leading shape. Returns ``sum(weights * -log softmax(logits)[target])``.
    """
    d = logits.data
    targets = np.asarray(targets)
    w = np.asarray(weights, dtype=d.dtype)
    z = d - d.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    total = -(w * picked).sum()

    def bw(g):
        p = np.exp(logp)
        p[...] *= w[..., None]
        np.put_along_axis(p, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - w[..., None], axis=-1)
        logits._accumulate(p * g)

    return Tensor._make(np.asarray(total, dtype=d.dtype), (logits,), bw)


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[..., idx[..., j]]`` along the last axis (take_along_axis)."""
    idx = np.asarray(idx)
    out = np.take_along_axis(x.data, idx, axis=-1)

    def bw(g):
        full = np.zeros_like(x.data)
        flat_full = full.reshape(-1, x.shape[-1])
        rows = np.repeat(np.arange(flat_full.shape[0]), idx.shape[-1])
        np.add.at(flat_full, (rows, idx.reshape(-1)), g.reshape(-1))
        x._accumulate(full)

    return Tensor._make(out, (x,), bw)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    out = np.where(keep, x.data, floor).astype(x.dtype)

    def bw(g):
        x._accumulate(g * keep)

    return Tensor._make(out, (x,), bw)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    w = np.asarray(weights, dtype=x.dtype)
    return (x * w).sum()


def kd_topk_loss(
    student_logits: Tensor,
    support_ids: np.ndarray,
    teacher_logits: np.ndarray,
    weights: np.ndarray,
    floor: float = 1e-12,
) -> tuple[Tensor, int]:
    """Weighted forward-KL between teacher top-k and the student's full softmax.

    ``student_logits``: (..., V). ``support_ids``/``teacher_logits``: (..., k).
    P is the softmax of the stored teacher logits over the k support tokens;
    Q is the student's full-vocabulary probability at those tokens, not
    renormalized, floored at ``floor``. Returns the loss and the number of
    clamped (position, token) entries.
    """
    tl = np.asarray(teacher_logits, dtype=np.float64)
    p = softmax(tl, axis=-1) if tl.size else tl
    with np.errstate(divide="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    logq_full = log_softmax(student_logits)
    logq = gather_last(logq_full, support_ids)
    log_floor = math.log(floor)
    w = np.asarray(weights, dtype=np.float64)[..., None]
    below = logq.data < log_floor
    clamped = int(np.count_nonzero(below & (w > 0)))
    if below.any():
        logq = clamp_min(logq, log_floor)
    dt = student_logits.dtype
    const = float((w * plogp).sum())
    loss = as_tensor(np.asarray(const, dtype=dt)) - (logq * (w * p).astype(dt)).sum()
    return loss, clamped
