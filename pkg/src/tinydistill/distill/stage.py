"""One complete distillation stage: build responses, annotate, train."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Sequence

from ..curation.sample import Sample
from ..model.transformer import TinyTransformer
from ..sft.trainer import StageConfig
from .annotate import AnnotatedDataset, annotate_topk
from .dataset import OnPolicyDataset, build_strategy_dataset
from .tklg import encode_annotations
from .trainer import DistillConfig, DistillLog, train_distill


@dataclass
class KDStageResult:
    student: TinyTransformer
    dataset: OnPolicyDataset
    annotated: AnnotatedDataset
    log: DistillLog

    @property
    def annotation_hash(self) -> str:
        return hashlib.sha256(encode_annotations(self.annotated)).hexdigest()


def run_kd_stage(student: TinyTransformer, teacher: TinyTransformer, queries: Sequence[Sample],
                 cfg: DistillConfig, stage: StageConfig, seed: int,
                 with_trace: bool = False) -> KDStageResult:
    """Distil ``teacher`` into ``student`` (in place) on ``queries``.

    ``with_trace`` only affects by-label targets, which then include the
    reasoning trace.
    """
    ds = build_strategy_dataset(cfg.strategy, queries, student.tokenizer, teacher=teacher,
                                student=student, decode_cfg=cfg.decode, seed=seed,
                                with_trace=with_trace)
    ann = annotate_topk(teacher, ds, cfg.k)
    stage = replace(stage, with_trace=with_trace)
    student, log = train_distill(student, ann, cfg, stage, seed, teacher, queries)
    return KDStageResult(student, ds, ann, log)
