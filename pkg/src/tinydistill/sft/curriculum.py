"""Two-stage curriculum: reasoning data first, fast-response pairs second."""
from __future__ import annotations

from dataclasses import replace
from typing import Callable, Sequence

from ..curation.sample import REASONING, Sample
from ..errors import ConfigError
from ..model.transformer import TinyTransformer
from .trainer import StageConfig, StepRecord, run_stage

DIRECT_FAST = "direct-fast"
NO_COT = "reasoning-no-cot"
WITH_COT = "reasoning-with-cot"
VARIANTS = (DIRECT_FAST, NO_COT, WITH_COT)


def run_curriculum(model: TinyTransformer, variant: str, stage1_corpus: Sequence[Sample],
                   stage2_corpus: Sequence[Sample], stage1: StageConfig, stage2: StageConfig,
                   seed: int, on_step: Callable[[str, StepRecord], None] | None = None,
                   ) -> tuple[TinyTransformer, dict[str, list[StepRecord]]]:
    """Train ``model`` in place under one curriculum variant.

    Stage 2 always trains on answer-only targets. ``direct-fast`` skips
    stage 1 entirely and never touches ``stage1_corpus``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown curriculum variant {variant!r}; expected one of {VARIANTS}")
    logs: dict[str, list[StepRecord]] = {}
    if variant != DIRECT_FAST:
        if variant == WITH_COT:
            missing = [s.id for s in stage1_corpus
                       if s.task_class == REASONING and not s.reasoning_trace]
            if missing:
                raise ConfigError(f"with-CoT curriculum needs reasoning traces; "
                                  f"{len(missing)} reasoning sample(s) lack one (e.g. {missing[0]})")
            corpus1 = list(stage1_corpus)
            cfg1 = replace(stage1, with_trace=True)
        else:
            corpus1 = [s.without_trace() for s in stage1_corpus]
            cfg1 = replace(stage1, with_trace=False)
        cb = (lambda r: on_step("stage1", r)) if on_step else None
        _, logs["stage1"] = run_stage(model, cfg1, corpus1, seed, cb)
    cb = (lambda r: on_step("stage2", r)) if on_step else None
    corpus2 = [s.without_trace() for s in stage2_corpus]
    _, logs["stage2"] = run_stage(model, replace(stage2, with_trace=False), corpus2, seed + 1, cb)
    return model, logs
