"""Synthetic tasks with oracle-computable answers.

Reasoning tasks (addition, sorting) come with a step-by-step trace; the
non-reasoning ones (reversal, modular remainder) are answer-only.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from ..curation.sample import NON_REASONING, REASONING, Sample

TASK_KINDS = ("addition", "reversal", "sorting", "modular")
TASK_ALPHABET = string.digits + "abcdefgh" + "+%=;:#rs"


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    digits: int = 2           # addition operand width
    min_len: int = 3          # reversal/sorting lengths
    max_len: int = 5
    modulus_max: int = 9
    split_seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")

    @property
    def task_class(self) -> str:
        return REASONING if self.kind in ("addition", "sorting") else NON_REASONING


@dataclass
class Suite:
    stage1: list[Sample]
    stage2: list[Sample]
    test: list[Sample]
    specs: list[TaskSpec] = field(default_factory=list)


# -- oracles -------------------------------------------------------------------

def addition_trace(a: int, b: int) -> tuple[str, str]:
    """Per-digit lines ``x+y+carry=sum;`` from the units up, and the answer."""
    da, db = str(a)[::-1], str(b)[::-1]
    carry = 0
    lines = []
    for i in range(max(len(da), len(db))):
        x = int(da[i]) if i < len(da) else 0
        y = int(db[i]) if i < len(db) else 0
        s = x + y + carry
        lines.append(f"{x}+{y}+{carry}={s};")
        carry = s // 10
    return "".join(lines), str(a + b)


def sorting_trace(digits: str) -> tuple[str, str]:
    """Insertion-sort trace: the sorted prefix after each insertion."""
    done: list[str] = []
    lines = []
    for ch in digits:
        done.append(ch)
        done.sort()
        lines.append("".join(done) + ";")
    return "".join(lines), "".join(sorted(digits))


def solve(query: str) -> str:
    """Oracle answer for any task query."""
    if query.startswith("r:"):
        return query[2:][::-1]
    if query.startswith("s:"):
        return "".join(sorted(query[2:]))
    if "+" in query:
        a, b = query.split("+")
        return str(int(a) + int(b))
    if "%" in query:
        a, m = query.split("%")
        return str(int(a) % int(m))
    raise ValueError(f"unrecognised query {query!r}")


def make_sample(spec: TaskSpec, query: str) -> Sample:
    attrs = {"subcategory": spec.kind, "answer_verifiable": True}
    if spec.kind == "addition":
        a, b = (int(x) for x in query.split("+"))
        trace, ans = addition_trace(a, b)
        attrs["difficulty"] = sum(1 for ln in trace.split(";") if ln and int(ln.split("=")[1]) >= 10)
        return Sample(query, ans, REASONING, trace, attrs)
    if spec.kind == "sorting":
        trace, ans = sorting_trace(query[2:])
        attrs["difficulty"] = len(query) - 2
        return Sample(query, ans, REASONING, trace, attrs)
    attrs["difficulty"] = len(query)
    return Sample(query, solve(query), NON_REASONING, None, attrs)


def _random_query(spec: TaskSpec, rng: np.random.Generator) -> str:
    if spec.kind == "addition":
        lo, hi = 10 ** (spec.digits - 1), 10 ** spec.digits
        return f"{rng.integers(lo, hi)}+{rng.integers(lo, hi)}"
    if spec.kind == "modular":
        return f"{rng.integers(10, 100)}%{rng.integers(2, spec.modulus_max + 1)}"
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    if spec.kind == "reversal":
        return "r:" + "".join(rng.choice(list("abcdefgh"), n))
    return "s:" + "".join(rng.choice(list(string.digits), n))


def query_space_size(spec: TaskSpec) -> int:
    if spec.kind == "addition":
        w = 9 * 10 ** (spec.digits - 1)
        return w * w
    if spec.kind == "modular":
        return 90 * (spec.modulus_max - 1)
    base = 8 if spec.kind == "reversal" else 10
    return sum(base ** n for n in range(spec.min_len, spec.max_len + 1))


def build_synthetic_suite(spec: TaskSpec, n_stage1: int, n_stage2: int, n_test: int) -> Suite:
    """Disjoint stage-1 (with traces), stage-2 (answer only) and test sets."""
    for n in (n_stage1, n_stage2, n_test):
        if n <= 0:
            raise ValueError("suite sizes must be positive")
    need = n_stage1 + n_stage2 + n_test
    if need > query_space_size(spec):
        raise ValueError(f"{spec.kind}: {need} distinct queries requested, only "
                         f"{query_space_size(spec)} exist")
    rng = np.random.default_rng(spec.split_seed)
    seen: set[str] = set()
    queries: list[str] = []
    while len(queries) < need:
        q = _random_query(spec, rng)
        if q not in seen:
            seen.add(q)
            queries.append(q)
    test_q = queries[:n_test]
    s1_q = queries[n_test:n_test + n_stage1]
    s2_q = queries[n_test + n_stage1:]
    stage1 = [make_sample(spec, q) for q in s1_q]
    stage2 = [make_sample(spec, q).without_trace() for q in s2_q]
    test = [make_sample(spec, q) for q in test_q]
    return Suite(stage1, stage2, test, [spec])


def build_mixed_suite(specs: list[TaskSpec], sizes: dict[str, tuple[int, int, int]]) -> Suite:
    """Concatenate per-task suites; ``sizes`` maps kind -> (stage1, stage2, test)."""
    out = Suite([], [], [], list(specs))
    for spec in specs:
        s = build_synthetic_suite(spec, *sizes[spec.kind])
        out.stage1 += s.stage1
        out.stage2 += s.stage2
        out.test += s.test
    return out
