from .checkpoint import (
    checkpoint_hash,
    deserialize_checkpoint,
    load_checkpoint,
    model_fingerprint,
    save_checkpoint,
    serialize_checkpoint,
)
from .generate import DecodeConfig, Generation, generate, generate_batch
from .tokenizer import BOS, EOS, PAD, SEP, SPECIALS, UNK, Tokenizer, build_tokenizer, require_same_tokenizer
from .transformer import (
    ModelConfig,
    TinyTransformer,
    attention_mask,
    forward_logits,
    segment_positions,
    student_config,
    teacher_config,
)

__all__ = [
    "BOS", "EOS", "PAD", "SEP", "SPECIALS", "UNK", "DecodeConfig", "Generation", "ModelConfig",
    "TinyTransformer", "Tokenizer", "attention_mask", "build_tokenizer", "checkpoint_hash",
    "deserialize_checkpoint", "forward_logits", "generate", "generate_batch", "load_checkpoint",
    "model_fingerprint", "require_same_tokenizer", "save_checkpoint", "serialize_checkpoint",
    "segment_positions", "student_config", "teacher_config",
]
