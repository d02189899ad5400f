from .filters import DECLARED_KEYS, Predicate, filter_attributes, parse_predicates
from .minhash import DedupResult, MinHashSignature, lsh_dedup, minhash_signature, shingles
from .mixing import ShortfallError, class_quotas, ratio_sample
from .sample import (
    ANSWER_MARK,
    NON_REASONING,
    REASONING,
    Sample,
    extract_answer,
    iter_jsonl,
    read_jsonl,
    sample_id,
    write_jsonl,
)
from .zipselect import ZLIB_VERSION, compressed_size, compression_ratio, zip_select

__all__ = [
    "ANSWER_MARK", "DECLARED_KEYS", "DedupResult", "MinHashSignature", "NON_REASONING",
    "Predicate", "REASONING", "Sample", "ShortfallError", "ZLIB_VERSION", "class_quotas",
    "compressed_size", "compression_ratio", "extract_answer", "filter_attributes", "iter_jsonl",
    "lsh_dedup", "minhash_signature", "parse_predicates", "ratio_sample", "read_jsonl",
    "sample_id", "shingles", "write_jsonl", "zip_select",
]
