"""Tiny decoder-only transformer (pre-norm, learned absolute positions).

Sequences may be packed: each position carries a segment id, positions
restart at every segment boundary and attention never crosses segments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Tensor, embedding, gelu, layer_norm, matmul, no_grad, softmax_t
from .tokenizer import Tokenizer


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    max_len: int
    vocab_size: int
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "max_len", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def teacher_config(vocab_size: int, max_len: int = 64, seed: int = 0) -> ModelConfig:
    return ModelConfig(n_layers=4, d_model=128, n_heads=4, d_ff=512, max_len=max_len,
                       vocab_size=vocab_size, seed=seed)


def student_config(vocab_size: int, max_len: int = 64, seed: int = 0) -> ModelConfig:
    return ModelConfig(n_layers=2, d_model=64, n_heads=2, d_ff=256, max_len=max_len,
                       vocab_size=vocab_size, seed=seed)


def segment_positions(segments: np.ndarray) -> np.ndarray:
    """Offset of each position from the start of its segment."""
    b, t = segments.shape
    idx = np.broadcast_to(np.arange(t), (b, t))
    starts = np.ones((b, t), dtype=bool)
    starts[:, 1:] = segments[:, 1:] != segments[:, :-1]
    start_idx = np.maximum.accumulate(np.where(starts, idx, 0), axis=1)
    return idx - start_idx


def attention_mask(segments: np.ndarray) -> np.ndarray:
    """(B, 1, T, T) boolean: causal and same-segment."""
    t = segments.shape[1]
    same = segments[:, :, None] == segments[:, None, :]
    causal = np.tril(np.ones((t, t), dtype=bool))
    return (same & causal)[:, None, :, :]


class TinyTransformer:
    def __init__(self, config: ModelConfig, tokenizer: Tokenizer, dtype=np.float32,
                 params: dict[str, np.ndarray] | None = None):
        if tokenizer.vocab_size != config.vocab_size:
            raise ValueError(
                f"tokenizer has {tokenizer.vocab_size} symbols, config says {config.vocab_size}")
        self.config = config
        self.tokenizer = tokenizer
        self.note = ""  # provenance, stored in the checkpoint header
        self.dtype = np.dtype(dtype)
        arrays = params if params is not None else self._init_params()
        expected = set(self._param_shapes())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ValueError(f"parameter set mismatch (missing {missing}, unexpected {extra})")
        self.params: dict[str, Tensor] = {
            name: Tensor(np.array(arrays[name], dtype=self.dtype), requires_grad=True, name=name)
            for name in sorted(arrays)
        }

    # -- parameters ---------------------------------------------------------
    def _param_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        shapes = {
            "tok_emb": (c.vocab_size, c.d_model),
            "pos_emb": (c.max_len, c.d_model),
            "ln_f.g": (c.d_model,),
            "ln_f.b": (c.d_model,),
            "lm_head": (c.d_model, c.vocab_size),
        }
        for i in range(c.n_layers):
            p = f"blocks.{i}."
            shapes.update({
                p + "ln1.g": (c.d_model,), p + "ln1.b": (c.d_model,),
                p + "attn.wq": (c.d_model, c.d_model), p + "attn.bq": (c.d_model,),
                p + "attn.wk": (c.d_model, c.d_model), p + "attn.bk": (c.d_model,),
                p + "attn.wv": (c.d_model, c.d_model), p + "attn.bv": (c.d_model,),
                p + "attn.wo": (c.d_model, c.d_model), p + "attn.bo": (c.d_model,),
                p + "ln2.g": (c.d_model,), p + "ln2.b": (c.d_model,),
                p + "mlp.w1": (c.d_model, c.d_ff), p + "mlp.b1": (c.d_ff,),
                p + "mlp.w2": (c.d_ff, c.d_model), p + "mlp.b2": (c.d_model,),
            })
        return shapes

    def _init_params(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.config.seed)
        resid_std = 0.02 / math.sqrt(2 * self.config.n_layers)
        out = {}
        for name, shape in sorted(self._param_shapes().items()):
            if name.endswith(".g"):
                out[name] = np.ones(shape)
            elif len(shape) == 1:
                out[name] = np.zeros(shape)
            elif name.endswith(("attn.wo", "mlp.w2")):
                out[name] = rng.normal(0.0, resid_std, shape)
            else:
                out[name] = rng.normal(0.0, 0.02, shape)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def decay_mask(self) -> list[bool]:
        """Weight decay applies to matrices only (not gains, biases)."""
        return [p.ndim >= 2 for p in self.params.values()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def astype(self, dtype) -> "TinyTransformer":
        out = TinyTransformer(self.config, self.tokenizer, dtype=dtype, params=self.state_dict())
        out.note = self.note
        return out

    def copy(self) -> "TinyTransformer":
        return self.astype(self.dtype)

    # -- forward ------------------------------------------------------------
    def forward(self, ids, segments=None) -> Tensor:
        """Logits of shape (B, T, V) (or (T, V) for a 1-D input)."""
        ids = np.asarray(ids)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None, :]
        b, t = ids.shape
        c = self.config
        if t > c.max_len:
            raise ValueError(f"sequence length {t} exceeds context length {c.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= c.vocab_size):
            bad = ids[(ids < 0) | (ids >= c.vocab_size)]
            raise ValueError(f"token id {int(bad[0])} outside vocabulary [0, {c.vocab_size})")
        if segments is None:
            segments = np.zeros((b, t), dtype=np.int64)
        else:
            segments = np.asarray(segments)
            if squeeze and segments.ndim == 1:
                segments = segments[None, :]
            if segments.shape != (b, t):
                raise ValueError("segment ids must match token ids in shape")
            if np.any(np.diff(segments, axis=1) < 0):
                raise ValueError("segment ids must be non-decreasing")
        P = self.params
        pos = segment_positions(segments)
        mask = attention_mask(segments)
        x = embedding(P["tok_emb"], ids) + embedding(P["pos_emb"], pos)
        h_dim = c.d_model // c.n_heads
        scale = 1.0 / math.sqrt(h_dim)
        for i in range(c.n_layers):
            p = f"blocks.{i}."
            h = layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])

            def heads(w, bias):
                return (matmul(h, P[w]) + P[bias]).reshape(b, t, c.n_heads, h_dim).transpose(0, 2, 1, 3)

            q = heads(p + "attn.wq", p + "attn.bq")
            k = heads(p + "attn.wk", p + "attn.bk")
            v = heads(p + "attn.wv", p + "attn.bv")
            att = softmax_t(matmul(q, k.swapaxes(-1, -2)) * scale, mask)
            y = matmul(att, v).transpose(0, 2, 1, 3).reshape(b, t, c.d_model)
            x = x + matmul(y, P[p + "attn.wo"]) + P[p + "attn.bo"]
            h2 = layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            m = gelu(matmul(h2, P[p + "mlp.w1"]) + P[p + "mlp.b1"])
            x = x + matmul(m, P[p + "mlp.w2"]) + P[p + "mlp.b2"]
        x = layer_norm(x, P["ln_f.g"], P["ln_f.b"])
        logits = matmul(x, P["lm_head"])
        if squeeze:
            logits = logits.reshape(t, c.vocab_size)
        return logits

    __call__ = forward

    def logits(self, ids, segments=None) -> np.ndarray:
        """Forward without graph recording; returns a plain array."""
        with no_grad():
            return self.forward(ids, segments).data


def forward_logits(model: TinyTransformer, token_ids, segment_mask=None) -> np.ndarray:
    return model.logits(token_ids, segment_mask)
