from .curriculum import DIRECT_FAST, NO_COT, VARIANTS, WITH_COT, run_curriculum
from .packing import (
    OversizeSampleError,
    PackedBatch,
    TokenizedSample,
    next_token_targets,
    pack_sequences,
    tokenize_sample,
)
from .schedule import cosine_lr
from .trainer import CLIP_THRESHOLD, WEIGHT_DECAY, StageConfig, StepRecord, Updater, run_stage

__all__ = [
    "CLIP_THRESHOLD", "DIRECT_FAST", "NO_COT", "OversizeSampleError", "PackedBatch", "StageConfig",
    "StepRecord", "TokenizedSample", "Updater", "VARIANTS", "WEIGHT_DECAY", "WITH_COT", "cosine_lr",
    "next_token_targets", "pack_sequences", "run_curriculum", "run_stage", "tokenize_sample",
]
