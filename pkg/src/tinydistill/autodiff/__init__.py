from .functional import (
    InfiniteDivergenceError,
    NonFiniteInputError,
    cross_entropy,
    embedding,
    gather_last,
    gelu,
    kd_topk_loss,
    kl_divergence,
    layer_norm,
    log_softmax,
    log_softmax_np,
    relu,
    softmax,
    softmax_t,
)
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .optim import AdamW, OptimizerState, adamw_step, clip_gradients, global_norm
from .tensor import Tensor, as_tensor, gradients, matmul, no_grad, zero_grad

__all__ = [
    "AdamW", "InfiniteDivergenceError", "NonFiniteInputError", "OptimizerState", "Tensor",
    "adamw_step", "as_tensor", "check_gradients", "clip_gradients", "cross_entropy",
    "embedding", "gather_last", "gelu", "global_norm", "gradients", "kd_topk_loss",
    "kl_divergence", "layer_norm", "log_softmax", "log_softmax_np", "matmul", "no_grad",
    "numerical_gradient", "relative_error", "relu", "softmax", "softmax_t", "zero_grad",
]
