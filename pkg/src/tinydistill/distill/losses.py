from __future__ import annotations

import logging
import math

import numpy as np

from ..autodiff import log_softmax_np, softmax
from .annotate import TopKRecord

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12


def kd_loss(student_logits: np.ndarray, record: TopKRecord, temperature: float = 1.0) -> float:
    """KL(P || Q) restricted to the teacher's top-k support, for one position.

    P renormalises the stored teacher logits over the support. Q is the
    student's full-vocabulary softmax read at the support ids (not
    renormalised), floored at ``Q_FLOOR``.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    ids = np.asarray(record.token_ids, dtype=np.int64)
    if ids.size < 2:
        raise ValueError("top-k record must hold at least two entries")
    if ids.max() >= z.shape[-1]:
        raise ValueError("support id outside the student vocabulary")
    p = softmax(np.asarray(record.logits, dtype=np.float64) / temperature)
    logq = log_softmax_np(z / temperature)[ids]
    floor = math.log(Q_FLOOR)
    if np.any(logq < floor):
        log.warning("student probability underflow on %d support token(s); clamped at %g",
                    int(np.sum(logq < floor)), Q_FLOOR)
        logq = np.maximum(logq, floor)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - logq[nz])))


def composite_loss(l_ce, l_kd, lambda_kd: float):
    """(1 - lambda) * CE + lambda * KD; works on floats and on graph tensors."""
    if not 0.0 <= lambda_kd <= 1.0:
        raise ValueError(f"lambda_kd must lie in [0, 1], got {lambda_kd}")
    if lambda_kd == 0.0:
        return l_ce
    if lambda_kd == 1.0:
        return l_kd
    return l_ce * (1.0 - lambda_kd) + l_kd * lambda_kd
