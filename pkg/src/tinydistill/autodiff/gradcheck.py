"""Central finite-difference gradient checks (float64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, gradients


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (mutated and restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-6) -> float:
    """Worst relative error between analytic and numerical gradients over ``params``.

    ``build_loss`` must rebuild the graph from the current parameter data.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradient checks require float64 parameters")
    analytic = gradients(build_loss(), params)

    def f() -> float:
        return float(build_loss().data)

    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = numerical_gradient(f, p.data, h)
        worst = max(worst, relative_error(ga, gn))
    return worst
