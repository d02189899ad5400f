"""Pipeline configuration: one JSON document with per-stage blocks, checked against a schema."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError

STAGE_KINDS = ("curate", "teacher", "sft-stage1", "sft-stage2", "kd", "eval")
DEFAULT_STAGES = ["curate", "sft-stage1", "sft-stage2", "kd", "eval"]

_STAGE_BLOCK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epochs": {"type": "integer", "minimum": 1},
        "tokens_per_batch": {"type": "integer", "minimum": 1},
        "peak_lr": {"type": "number", "exclusiveMinimum": 0},
        "min_lr": {"type": "number", "exclusiveMinimum": 0},
        "warmup_steps": {"type": "integer", "minimum": 0},
        "max_len": {"type": "integer", "minimum": 2},
        "mask_policy": {"enum": ["response", "all"]},
        "with_trace": {"type": "boolean"},
        "weight_decay": {"type": "number", "minimum": 0},
        "clip": {"type": "number", "exclusiveMinimum": 0},
    },
}

_DECODE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["greedy", "temperature"]},
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "max_new": {"type": "integer", "minimum": 1},
    },
}

_TASK = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["addition", "reversal", "sorting", "modular"]},
        "digits": {"type": "integer", "minimum": 1, "maximum": 6},
        "min_len": {"type": "integer", "minimum": 1},
        "max_len": {"type": "integer", "minimum": 1},
        "modulus_max": {"type": "integer", "minimum": 2},
        "split_seed": {"type": "integer"},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1},
                  "minItems": 3, "maxItems": 3},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tinydistill pipeline config",
    "type": "object",
    "additionalProperties": False,
    "required": ["data"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_root": {"type": "string"},
        "run_id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "stages": {"type": "array", "items": {"enum": list(STAGE_KINDS)}, "minItems": 1,
                   "uniqueItems": True},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tasks"],
            "properties": {
                "tasks": {"type": "array", "items": _TASK, "minItems": 1},
                "filters": {"type": "array", "items": {"type": "object"}},
                "dedup": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "bands": {"type": "integer", "minimum": 1},
                        "rows": {"type": "integer", "minimum": 1},
                        "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                        "shingle": {"type": "integer", "minimum": 1},
                        "unit": {"enum": ["word", "char"]},
                        "seed": {"type": "integer"},
                    },
                },
                "zip_budget": {"type": ["integer", "null"], "minimum": 1},
                "mix_total": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"max_len": {"type": "integer", "minimum": 8, "maximum": 1024}},
        },
        "teacher": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "checkpoint": {"type": ["string", "null"]},
                "seed": {"type": "integer", "minimum": 0},
                "train": _STAGE_BLOCK,
            },
        },
        "curriculum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["direct-fast", "reasoning-no-cot", "reasoning-with-cot"]},
                "stage1": _STAGE_BLOCK,
                "stage2": _STAGE_BLOCK,
            },
        },
        "distillation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_kd": {"type": "number", "minimum": 0, "maximum": 1},
                "k": {"type": "integer", "minimum": 2},
                "strategy": {"enum": ["by-label", "by-teacher", "by-student"]},
                "refreshes": {"type": "integer", "minimum": 0},
                "temperature": {"type": "number", "exclusiveMinimum": 0},
                "decode": _DECODE,
                "corpus": {"enum": ["stage1", "stage2"]},
                "train": _STAGE_BLOCK,
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"decode": _DECODE},
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "output_root": "runs",
    "stages": DEFAULT_STAGES,
    "data": {
        "filters": [],
        "dedup": {"enabled": True, "bands": 16, "rows": 8, "threshold": 0.8, "shingle": 3,
                  "unit": "char", "seed": 1},
        "zip_budget": None,
        "mix_total": None,
    },
    "model": {"max_len": 48},
    "teacher": {"checkpoint": None, "seed": 0, "train": {}},
    "curriculum": {"variant": "reasoning-with-cot", "stage1": {}, "stage2": {}},
    "distillation": {"lambda_kd": 0.9, "k": 10, "strategy": "by-student", "refreshes": 0,
                     "temperature": 1.0, "decode": {}, "corpus": "stage2", "train": {}},
    "eval": {"decode": {}},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(doc) -> None:
    """Raise ConfigError with a JSON pointer at the first schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _pointer(e.absolute_path))


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def digest(obj) -> str:
    return hashlib.sha256(canonical(obj)).hexdigest()


@dataclass
class PipelineConfig:
    raw: dict
    resolved: dict = field(init=False)

    def __post_init__(self):
        validate(self.raw)
        self.resolved = _merge(DEFAULTS, self.raw)
        self._check()

    def _check(self) -> None:
        r = self.resolved
        stages = r["stages"]
        order = [s for s in STAGE_KINDS if s in stages]
        if order != list(stages):
            raise ConfigError(f"stages must follow the order {list(STAGE_KINDS)}", "/stages")
        if r["curriculum"]["variant"] == "direct-fast" and "sft-stage1" in stages:
            raise ConfigError("direct-fast curriculum has no stage 1; drop 'sft-stage1'", "/stages")
        needs_teacher = "kd" in stages
        if needs_teacher and "teacher" not in stages and not r["teacher"]["checkpoint"]:
            raise ConfigError("kd needs a teacher: give teacher.checkpoint or add the 'teacher' stage",
                              "/teacher/checkpoint")
        d = r["distillation"]
        if d["refreshes"] and d["strategy"] != "by-student":
            raise ConfigError("refresh needs student-generated data", "/distillation/refreshes")
        dd = r["data"]["dedup"]
        if dd["enabled"] and dd["bands"] * dd["rows"] <= 0:
            raise ConfigError("bands * rows must be positive", "/data/dedup")
        for i, t in enumerate(r["data"]["tasks"]):
            if "sizes" not in t:
                raise ConfigError("task needs sizes [stage1, stage2, test]", f"/data/tasks/{i}/sizes")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {p} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls(doc)

    def override(self, **flags) -> "PipelineConfig":
        """Flag values (when not None) take precedence over config fields."""
        raw = copy.deepcopy(self.raw)
        for dotted, value in flags.items():
            if value is None:
                continue
            node = raw
            keys = dotted.split(".")
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
        return PipelineConfig(raw)

    def block(self, *keys):
        node = self.resolved
        for k in keys:
            node = node[k]
        return node

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])

    @property
    def stages(self) -> list[str]:
        return list(self.resolved["stages"])

    def hash(self) -> str:
        """Content hash; where the run is written does not change it."""
        return digest({k: v for k, v in self.resolved.items() if k not in ("output_root", "run_id")})
