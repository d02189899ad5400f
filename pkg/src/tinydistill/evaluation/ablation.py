"""Ablation grids over the KD weight, top-k, response strategy, stage order and curriculum.

Every grid starts from the same base run (teacher, suite, stage configs and
seeds) and writes a CSV report, a JSON manifest linking rows to their run
directories, and a PNG figure.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..curation.sample import REASONING, Sample
from ..distill.stage import run_kd_stage
from ..distill.trainer import DistillConfig
from ..model.checkpoint import model_fingerprint, save_checkpoint
from ..model.generate import DecodeConfig
from ..model.transformer import TinyTransformer, student_config
from ..sft.curriculum import DIRECT_FAST, NO_COT, VARIANTS, WITH_COT, run_curriculum
from ..sft.trainer import StageConfig, run_stage
from .metrics import EvalResult, evaluate
from .plots import plot_grid
from .tasks import Suite

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
TOPK_GRID = (5, 10, 15, 20)
STRATEGY_ROWS = ("SFT-only", "by-label", "by-teacher", "by-student", "by-student*")
PIPELINE_ORDERINGS = (
    ("SFT(R)", "SFT(F)"),
    ("SFT(R)", "KD(F)"),
    ("SFT(R)", "SFT(F)", "KD(F)"),
    ("SFT(R)", "KD(F)", "SFT(F)"),
    ("SFT(R)", "SFT(F)", "KD(R)", "KD(F)"),
    ("SFT(R)", "KD(R)", "SFT(F)", "KD(F)"),
)
GRIDS = ("lambda", "topk", "strategy", "pipeline", "curriculum")


@dataclass
class BaseRun:
    """Everything the grids hold fixed: teacher, data, stage configs and seeds."""
    teacher: TinyTransformer
    suite: Suite
    stage1: StageConfig
    stage2: StageConfig
    kd_stage: StageConfig
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval_decode: DecodeConfig = field(default_factory=DecodeConfig)
    seeds: tuple[int, ...] = (0,)
    variant: str = WITH_COT
    max_len: int = 64
    _bases: dict = field(default_factory=dict, repr=False)

    @property
    def tokenizer(self):
        return self.teacher.tokenizer

    def fresh_student(self, seed: int) -> TinyTransformer:
        cfg = student_config(self.tokenizer.vocab_size, self.max_len, seed=seed)
        return TinyTransformer(cfg, self.tokenizer)

    def base_student(self, seed: int) -> TinyTransformer:
        """Curriculum checkpoint for ``seed`` (trained once, then copied)."""
        if seed not in self._bases:
            m = self.fresh_student(seed)
            run_curriculum(m, self.variant, self.suite.stage1, self.suite.stage2,
                           self.stage1, self.stage2, seed)
            m.note = f"curriculum {self.variant} seed {seed}"
            self._bases[seed] = m
        return self._bases[seed].copy()

    def data_fingerprint(self) -> str:
        h = hashlib.sha256()
        for part in (self.suite.stage1, self.suite.stage2, self.suite.test):
            for s in part:
                h.update(s.id.encode())
            h.update(b"|")
        h.update(model_fingerprint(self.teacher))
        h.update(json.dumps([list(self.seeds), self.stage1.to_dict(), self.stage2.to_dict(),
                             self.kd_stage.to_dict()], sort_keys=True).encode())
        return h.hexdigest()

    def evaluate(self, model: TinyTransformer) -> EvalResult:
        return evaluate(model, self.suite.test, self.eval_decode, teacher=self.teacher)


@dataclass
class Cell:
    """Outcome of one (configuration, seed) run."""
    student: TinyTransformer
    result: EvalResult
    extra: dict = field(default_factory=dict)


# -- report ----------------------------------------------------------------------

def _task_columns(base: BaseRun) -> list[str]:
    return [f"acc_{k}" for k in sorted({str(s.attributes.get("subcategory", "unknown"))
                                         for s in base.suite.test})]


def _row(label_key: str, label, cells: list[Cell], tasks: list[str]) -> dict:
    row: dict = {label_key: label, "seeds": len(cells)}
    for col in tasks:
        row[col] = float(np.mean([c.result.per_task[col[4:]] for c in cells]))
    row["acc_avg"] = float(np.mean([row[c] for c in tasks]))
    row["accuracy"] = float(np.mean([c.result.accuracy for c in cells]))
    row["acc_reasoning"] = float(np.mean([c.result.per_class.get(REASONING, np.nan) for c in cells]))
    kl = [c.result.kl_median for c in cells if c.result.kl_median is not None]
    row["kl_median"] = float(np.mean(kl)) if kl else float("nan")
    return row


def write_report(out_dir, grid: str, label_key: str, rows: list[dict], manifest: dict,
                 tasks: list[str]) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = [label_key, "seeds", *tasks, "acc_avg", "accuracy", "acc_reasoning", "kl_median"]
    with open(out / f"{grid}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in fields})
    (out / f"{grid}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    plot_grid(rows, label_key, tasks, out / f"{grid}.png", title=f"{grid} ablation")
    return {"csv": str(out / f"{grid}.csv"), "manifest": str(out / f"{grid}.json"),
            "figure": str(out / f"{grid}.png")}


def _run_grid(base: BaseRun, grid: str, label_key: str, configs: Sequence,
              run_one: Callable[[object, int], Cell], out_dir) -> dict:
    out = Path(out_dir) / grid
    tasks = _task_columns(base)
    rows, mrows = [], []
    for conf in configs:
        label = conf if not isinstance(conf, tuple) else "+".join(conf)
        cells = []
        run_dirs = []
        for seed in base.seeds:
            cell = run_one(conf, seed)
            rd = out / _slug(str(label)) / f"seed{seed}"
            rd.mkdir(parents=True, exist_ok=True)
            ck = save_checkpoint(rd / "student.tdck", cell.student)
            (rd / "eval.json").write_text(cell.result.to_json() + "\n")
            cell.extra["checkpoint"] = ck.hex()
            cell.extra["accuracy"] = cell.result.accuracy
            cells.append(cell)
            run_dirs.append({"seed": seed, "run_dir": rd.relative_to(out).as_posix(), **cell.extra})
        row = _row(label_key, label, cells, tasks)
        rows.append(row)
        mrows.append({label_key: label, "runs": run_dirs})
    manifest = {"grid": grid, "label": label_key, "data_fingerprint": base.data_fingerprint(),
                "seeds": list(base.seeds), "rows": mrows}
    paths = write_report(out, grid, label_key, rows, manifest, tasks)
    return {"rows": rows, "manifest": manifest, **paths}


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


def _kd(base: BaseRun, student: TinyTransformer, seed: int, corpus: Sequence[Sample],
        with_trace: bool = False, **overrides):
    cfg = replace(base.distill, **overrides)
    return run_kd_stage(student, base.teacher, corpus, cfg, base.kd_stage, seed, with_trace)


# -- grids -----------------------------------------------------------------------

def ablate_lambda(base: BaseRun, out_dir, grid: Sequence[float] = LAMBDA_GRID) -> dict:
    """By-label KD from the base checkpoint, one row per KD weight."""
    def one(lam, seed):
        r = _kd(base, base.base_student(seed), seed, base.suite.stage2,
                strategy="by-label", lambda_kd=float(lam), refreshes=0)
        return Cell(r.student, base.evaluate(r.student),
                    {"lambda_kd": float(lam), "annotation": r.annotation_hash})
    return _run_grid(base, "lambda", "lambda_kd", [float(x) for x in grid], one, out_dir)


def ablate_topk(base: BaseRun, out_dir, grid: Sequence[int] = TOPK_GRID) -> dict:
    """Re-annotate at each k; everything else frozen."""
    def one(k, seed):
        r = _kd(base, base.base_student(seed), seed, base.suite.stage2,
                strategy="by-label", k=int(k), refreshes=0)
        return Cell(r.student, base.evaluate(r.student),
                    {"k": int(k), "annotation": r.annotation_hash})
    return _run_grid(base, "topk", "k", [int(x) for x in grid], one, out_dir)


def ablate_strategy(base: BaseRun, out_dir, refreshes: int = 2) -> dict:
    def one(name, seed):
        student = base.base_student(seed)
        if name == "SFT-only":
            return Cell(student, base.evaluate(student), {"stages": []})
        strategy = "by-student" if name.startswith("by-student") else name
        r = _kd(base, student, seed, base.suite.stage2, strategy=strategy,
                refreshes=refreshes if name.endswith("*") else 0)
        events = [e.to_dict() for e in r.log.refreshes]
        return Cell(r.student, base.evaluate(r.student),
                    {"strategy": strategy, "annotation": r.annotation_hash,
                     "refresh_events": events})
    return _run_grid(base, "strategy", "method", list(STRATEGY_ROWS), one, out_dir)


def run_ordering(base: BaseRun, ordering: Sequence[str], seed: int) -> tuple[TinyTransformer, list[dict]]:
    """Apply a stage sequence to a fresh student; KD stages use by-label data."""
    m = base.fresh_student(seed)
    trail = []
    for i, st in enumerate(ordering):
        s = seed + i
        if st == "SFT(R)":
            run_stage(m, replace(base.stage1, with_trace=True), base.suite.stage1, s)
        elif st == "SFT(F)":
            run_stage(m, replace(base.stage2, with_trace=False),
                      [x.without_trace() for x in base.suite.stage2], s)
        elif st in ("KD(R)", "KD(F)"):
            corpus = base.suite.stage1 if st == "KD(R)" else base.suite.stage2
            r = _kd(base, m, s, corpus, with_trace=st == "KD(R)", strategy="by-label", k=10,
                    refreshes=0)
            m = r.student
        else:
            raise ValueError(f"unknown pipeline stage {st!r}")
        trail.append({"stage": st, "checkpoint": model_fingerprint(m).hex()})
    return m, trail


def ablate_pipeline(base: BaseRun, out_dir,
                    orderings: Sequence[Sequence[str]] = PIPELINE_ORDERINGS) -> dict:
    def one(order, seed):
        m, trail = run_ordering(base, order, seed)
        return Cell(m, base.evaluate(m), {"stages": list(order), "trail": trail})
    return _run_grid(base, "pipeline", "pipeline", [tuple(o) for o in orderings], one, out_dir)


def ablate_curriculum(base: BaseRun, out_dir, variants: Sequence[str] = VARIANTS) -> dict:
    def one(variant, seed):
        m = base.fresh_student(seed)
        run_curriculum(m, variant, base.suite.stage1, base.suite.stage2, base.stage1,
                       base.stage2, seed)
        return Cell(m, base.evaluate(m), {"variant": variant})
    return _run_grid(base, "curriculum", "variant", list(variants), one, out_dir)


ABLATIONS = {
    "lambda": ablate_lambda,
    "topk": ablate_topk,
    "strategy": ablate_strategy,
    "pipeline": ablate_pipeline,
    "curriculum": ablate_curriculum,
}

__all__ = [
    "ABLATIONS", "BaseRun", "DIRECT_FAST", "GRIDS", "LAMBDA_GRID", "NO_COT", "PIPELINE_ORDERINGS",
    "STRATEGY_ROWS", "TOPK_GRID", "WITH_COT", "ablate_curriculum", "ablate_lambda",
    "ablate_pipeline", "ablate_strategy", "ablate_topk", "run_ordering", "write_report",
]
