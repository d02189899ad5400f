from .annotate import AnnotatedDataset, AnnotatedRecord, TopKRecord, annotate_topk, select_topk
from .dataset import (
    LABEL_FINGERPRINT,
    STRATEGIES,
    OnPolicyDataset,
    OnPolicyRecord,
    build_strategy_dataset,
    generate_responses,
    label_response,
)
from .losses import Q_FLOOR, composite_loss, kd_loss
from .stage import KDStageResult, run_kd_stage
from .tklg import decode_annotations, encode_annotations, read_annotations, write_annotations
from .trainer import DistillConfig, DistillLog, DistillStep, RefreshEvent, refresh_steps, train_distill

__all__ = [
    "AnnotatedDataset", "AnnotatedRecord", "DistillConfig", "DistillLog", "DistillStep", "KDStageResult",
    "LABEL_FINGERPRINT", "OnPolicyDataset", "OnPolicyRecord", "Q_FLOOR", "RefreshEvent",
    "STRATEGIES", "TopKRecord", "annotate_topk", "build_strategy_dataset", "composite_loss",
    "decode_annotations", "encode_annotations", "generate_responses", "kd_loss", "label_response",
    "read_annotations", "refresh_steps", "run_kd_stage", "select_topk", "train_distill", "write_annotations",
]
