"""Rule-based attribute filtering.

A predicate spec is a list of ``{"key", "op", "value"}`` clauses that must
all hold. Keys are checked against the declared attribute set when the spec
is parsed, before any sample is looked at.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Sequence

from ..errors import ConfigError
from .sample import Sample

DECLARED_KEYS = frozenset({"difficulty", "answer_verifiable", "subcategory"})

_OPS: dict[str, Callable] = {
    "eq": operator.eq,
    "ne": operator.ne,
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
    "in": lambda a, b: a in b,
}


@dataclass(frozen=True)
class Predicate:
    key: str
    op: str
    value: object

    @property
    def label(self) -> str:
        return f"{self.key} {self.op} {self.value!r}"

    def __call__(self, sample: Sample) -> bool:
        if self.key not in sample.attributes:
            return False
        try:
            return bool(_OPS[self.op](sample.attributes[self.key], self.value))
        except TypeError:
            return False


def parse_predicates(spec: Sequence[dict], declared=DECLARED_KEYS) -> list[Predicate]:
    preds = []
    for i, clause in enumerate(spec):
        for field in ("key", "op", "value"):
            if field not in clause:
                raise ConfigError(f"missing {field!r}", f"/filters/{i}")
        if clause["key"] not in declared:
            raise ConfigError(f"unknown attribute key {clause['key']!r} "
                              f"(declared: {sorted(declared)})", f"/filters/{i}/key")
        if clause["op"] not in _OPS:
            raise ConfigError(f"unknown operator {clause['op']!r}", f"/filters/{i}/op")
        value = clause["value"]
        if clause["op"] == "in":
            value = tuple(value)
        preds.append(Predicate(clause["key"], clause["op"], value))
    return preds


def filter_attributes(pool: Sequence[Sample], predicate_spec: Sequence[dict],
                      declared=DECLARED_KEYS) -> tuple[list[Sample], dict[str, int]]:
    """Keep samples satisfying every predicate; report rejections per predicate.

    A sample failing several predicates is counted under each of them.
    """
    preds = parse_predicates(predicate_spec, declared)
    report = {p.label: 0 for p in preds}
    kept = []
    for s in pool:
        ok = True
        for p in preds:
            if not p(s):
                report[p.label] += 1
                ok = False
        if ok:
            kept.append(s)
    return kept, report
