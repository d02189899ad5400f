from .metrics import EvalResult, evaluate, per_token_kl, rescore, score_generation
from .tasks import (
    TASK_ALPHABET,
    TASK_KINDS,
    Suite,
    TaskSpec,
    addition_trace,
    build_mixed_suite,
    build_synthetic_suite,
    make_sample,
    query_space_size,
    solve,
    sorting_trace,
)

__all__ = [
    "EvalResult", "Suite", "TASK_ALPHABET", "TASK_KINDS", "TaskSpec", "addition_trace",
    "build_mixed_suite", "build_synthetic_suite", "evaluate", "make_sample", "per_token_kl",
    "query_space_size", "rescore", "score_generation", "solve", "sorting_trace",
]
