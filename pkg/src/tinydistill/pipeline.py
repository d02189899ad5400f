"""Stage orchestration: curate, optional teacher, two SFT stages, KD and evaluation.

Every stage reads its inputs through the manifest (hash-checked) and records
the hashes of everything it writes, so a resumed run refuses tampered files.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, digest
from .curation import (
    NON_REASONING,
    REASONING,
    filter_attributes,
    lsh_dedup,
    ratio_sample,
    read_jsonl,
    write_jsonl,
    zip_select,
)
from .distill import DistillConfig, run_kd_stage, write_annotations
from .errors import ConfigError, IntegrityError, StageError
from .evaluation.metrics import evaluate
from .evaluation.plots import plot_grid, plot_losses
from .evaluation.tasks import TASK_ALPHABET, TaskSpec, build_mixed_suite
from .manifest import RunManifest, StageEntry, file_sha256
from .model import (
    DecodeConfig,
    TinyTransformer,
    Tokenizer,
    build_tokenizer,
    load_checkpoint,
    save_checkpoint,
    student_config,
    teacher_config,
)
from .sft import WITH_COT, StageConfig, run_stage

log = logging.getLogger(__name__)

STUDENT_CKPTS = {"sft-stage1": "models/sft_stage1.tdck", "sft-stage2": "models/sft_stage2.tdck",
                 "kd": "models/student_kd.tdck"}
TEACHER_CKPT = "models/teacher.tdck"


def run_root(cfg: PipelineConfig) -> Path:
    return Path(os.environ.get("TD_RUN_ROOT") or cfg.resolved["output_root"])


def run_dir_for(cfg: PipelineConfig) -> Path:
    run_id = cfg.resolved.get("run_id") or f"run-{cfg.hash()[:12]}"
    return run_root(cfg) / run_id


def stage_config(block: dict, **defaults) -> StageConfig:
    merged = {**defaults, **block}
    return StageConfig.from_dict(merged)


def _write_steps(path: Path, steps) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in steps:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


class _Context:
    def __init__(self, cfg: PipelineConfig, run_dir: Path, manifest: RunManifest, entry: StageEntry):
        self.cfg = cfg
        self.run_dir = run_dir
        self.manifest = manifest
        self.entry = entry
        self.written: list[str] = []

    def input(self, rel: str) -> Path:
        prod = self.manifest.producer(rel)
        if prod is None or prod.status != "completed":
            raise StageError(f"stage {self.entry.kind} needs {rel}, which no completed stage produced")
        p = self.run_dir / rel
        if not p.exists():
            raise IntegrityError(f"{rel} (output of stage {prod.kind}) is missing")
        got = file_sha256(p)
        if got != prod.outputs[rel]:
            raise IntegrityError(f"{rel} does not match the hash recorded by stage {prod.kind}: "
                                 f"manifest {prod.outputs[rel][:16]}, file {got[:16]}")
        self.entry.inputs[rel] = got
        return p

    def external(self, name: str, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"external input {p} not found", f"/{name.replace('.', '/')}")
        got = file_sha256(p)
        want = self.manifest.external_inputs.get(name)
        if want is not None and want != got:
            raise IntegrityError(f"external input {p} changed since the run started "
                                 f"(was {want[:16]}, now {got[:16]})")
        self.manifest.external_inputs[name] = got
        self.entry.inputs[name] = got
        return p

    def output(self, rel: str) -> Path:
        p = self.run_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(rel)
        return p

    # -- shared loaders ---------------------------------------------------------
    def tokenizer(self) -> Tokenizer:
        syms = json.loads(self.input("data/tokenizer.json").read_text(encoding="utf-8"))
        return Tokenizer.from_symbols(syms)

    def corpus(self, name: str):
        return read_jsonl(self.input(f"data/{name}.jsonl"))

    def teacher(self) -> TinyTransformer:
        ext = self.cfg.block("teacher", "checkpoint")
        if self.manifest.producer(TEACHER_CKPT) is not None:
            return load_checkpoint(self.input(TEACHER_CKPT))
        if ext:
            return load_checkpoint(self.external("teacher.checkpoint", ext))
        raise StageError("no teacher checkpoint available")

    def latest_student(self) -> TinyTransformer | None:
        for kind in ("kd", "sft-stage2", "sft-stage1"):
            e = self.manifest.entry(kind)
            if e is not None and e.status == "completed" and kind != self.entry.kind:
                return load_checkpoint(self.input(STUDENT_CKPTS[kind]))
        return None

    def fresh_student(self, tok: Tokenizer) -> TinyTransformer:
        cfg = student_config(tok.vocab_size, self.cfg.block("model", "max_len"), seed=self.cfg.seed)
        return TinyTransformer(cfg, tok)


# -- stages ------------------------------------------------------------------------

def stage_curate(ctx: _Context) -> dict:
    d = ctx.cfg.block("data")
    seed = ctx.cfg.seed
    specs, sizes = [], {}
    for t in d["tasks"]:
        fields = {k: v for k, v in t.items() if k != "sizes"}
        specs.append(TaskSpec(**fields))
        sizes[t["kind"]] = tuple(t["sizes"])
    if len(sizes) != len(specs):
        raise ConfigError("each task kind may appear once", "/data/tasks")
    suite = build_mixed_suite(specs, sizes)
    report: dict = {"generated": {"stage1": len(suite.stage1), "stage2": len(suite.stage2),
                                  "test": len(suite.test)}}
    pools = {"stage1": suite.stage1, "stage2": suite.stage2}
    if d["filters"]:
        for name in pools:
            pools[name], rej = filter_attributes(pools[name], d["filters"])
            report.setdefault("filter_rejections", {})[name] = rej
    dd = d["dedup"]
    if dd["enabled"]:
        for name in pools:
            res = lsh_dedup(pools[name], dd["bands"], dd["rows"], dd["threshold"], dd["shingle"],
                            dd["bands"] * dd["rows"], dd["seed"], dd["unit"])
            pools[name] = res.kept
            report.setdefault("dedup", {})[name] = {"removed": res.report,
                                                    "candidate_pairs": res.candidate_pairs}
    s1 = pools["stage1"]
    reasoning = [s for s in s1 if s.task_class == REASONING]
    other = [s for s in s1 if s.task_class == NON_REASONING]
    if d["zip_budget"] is not None:
        reasoning = zip_select(reasoning, d["zip_budget"], seed)
        report["zip_selected"] = len(reasoning)
    if d["mix_total"] is not None:
        s1 = ratio_sample(reasoning, other, d["mix_total"], seed)
    else:
        s1 = reasoning + other
    pools["stage1"] = s1
    texts = [s.query + s.target_text(True) for part in (s1, pools["stage2"], suite.test) for s in part]
    tok = build_tokenizer(texts, TASK_ALPHABET)
    write_jsonl(ctx.output("data/stage1.jsonl"), pools["stage1"])
    write_jsonl(ctx.output("data/stage2.jsonl"), pools["stage2"])
    write_jsonl(ctx.output("data/test.jsonl"), suite.test)
    ctx.output("data/tokenizer.json").write_text(json.dumps(tok.to_json()) + "\n", encoding="utf-8")
    report["final"] = {k: len(v) for k, v in pools.items()} | {"test": len(suite.test)}
    ctx.output("data/curation.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                                                encoding="utf-8")
    return report["final"]


def stage_teacher(ctx: _Context) -> dict:
    tok = ctx.tokenizer()
    corpus = [s.without_trace() for s in ctx.corpus("stage2")]
    t = ctx.cfg.block("teacher")
    max_len = ctx.cfg.block("model", "max_len")
    model = TinyTransformer(teacher_config(tok.vocab_size, max_len, seed=t["seed"]), tok)
    st = stage_config(t["train"], max_len=max_len, with_trace=False)
    _, steps = run_stage(model, replace(st, with_trace=False), corpus, ctx.cfg.seed + 100)
    model.note = f"teacher seed {t['seed']}"
    save_checkpoint(ctx.output(TEACHER_CKPT), model)
    _write_steps(ctx.output("logs/teacher.jsonl"), steps)
    return {"steps": len(steps), "final_loss": steps[-1].loss}


def stage_sft1(ctx: _Context) -> dict:
    tok = ctx.tokenizer()
    variant = ctx.cfg.block("curriculum", "variant")
    with_trace = variant == WITH_COT
    corpus = ctx.corpus("stage1")
    if not with_trace:
        corpus = [s.without_trace() for s in corpus]
    model = ctx.fresh_student(tok)
    st = stage_config(ctx.cfg.block("curriculum", "stage1"),
                      max_len=ctx.cfg.block("model", "max_len"), with_trace=with_trace)
    _, steps = run_stage(model, replace(st, with_trace=with_trace), corpus, ctx.cfg.seed)
    model.note = f"sft-stage1 {variant} seed {ctx.cfg.seed}"
    save_checkpoint(ctx.output(STUDENT_CKPTS["sft-stage1"]), model)
    _write_steps(ctx.output("logs/sft_stage1.jsonl"), steps)
    return {"steps": len(steps), "final_loss": steps[-1].loss}


def stage_sft2(ctx: _Context) -> dict:
    tok = ctx.tokenizer()
    corpus = [s.without_trace() for s in ctx.corpus("stage2")]
    model = ctx.latest_student() or ctx.fresh_student(tok)
    st = stage_config(ctx.cfg.block("curriculum", "stage2"),
                      max_len=ctx.cfg.block("model", "max_len"), with_trace=False)
    _, steps = run_stage(model, replace(st, with_trace=False), corpus, ctx.cfg.seed + 1)
    model.note = f"sft-stage2 seed {ctx.cfg.seed}"
    save_checkpoint(ctx.output(STUDENT_CKPTS["sft-stage2"]), model)
    _write_steps(ctx.output("logs/sft_stage2.jsonl"), steps)
    return {"steps": len(steps), "final_loss": steps[-1].loss}


def distill_config(block: dict) -> DistillConfig:
    return DistillConfig(lambda_kd=block["lambda_kd"], k=block["k"], strategy=block["strategy"],
                         refreshes=block["refreshes"], temperature=block["temperature"],
                         decode=DecodeConfig(**block["decode"]))


def stage_kd(ctx: _Context) -> dict:
    ctx.tokenizer()
    b = ctx.cfg.block("distillation")
    dcfg = distill_config(b)
    student = ctx.latest_student()
    if student is None:
        raise StageError("kd needs a trained student; run an SFT stage first")
    teacher = ctx.teacher()
    queries = ctx.corpus(b["corpus"])
    st = stage_config(b["train"], max_len=ctx.cfg.block("model", "max_len"), with_trace=False)
    seed = ctx.cfg.seed + 2
    res = run_kd_stage(student, teacher, queries, dcfg, st, seed, with_trace=False)
    res.dataset.write(ctx.output("kd/responses.jsonl"))
    write_annotations(ctx.output("kd/annotations.tklg"), res.annotated)
    for i, ev in enumerate(res.log.refreshes, 1):
        ev.dataset.write(ctx.output(f"kd/refresh{i}_responses.jsonl"))
        write_annotations(ctx.output(f"kd/refresh{i}_annotations.tklg"), ev.annotated)
    res.student.note = f"kd {dcfg.strategy} seed {ctx.cfg.seed}"
    save_checkpoint(ctx.output(STUDENT_CKPTS["kd"]), res.student)
    _write_steps(ctx.output("logs/kd.jsonl"), res.log.steps)
    plot_losses([s.to_dict() for s in res.log.steps], ctx.output("kd/loss.png"),
                refresh_at=[e.step for e in res.log.refreshes])
    return {"steps": len(res.log.steps), "refresh_events": [e.to_dict() for e in res.log.refreshes],
            "annotation_skipped": res.annotated.skipped, "train_skipped": res.log.skipped,
            "clamped": int(sum(s.clamped for s in res.log.steps))}


def stage_eval(ctx: _Context) -> dict:
    test = ctx.corpus("test")
    decode = DecodeConfig(**ctx.cfg.block("eval", "decode"))
    teacher = None
    if ctx.manifest.producer(TEACHER_CKPT) is not None or ctx.cfg.block("teacher", "checkpoint"):
        teacher = ctx.teacher()
    models = []
    for kind in ("sft-stage1", "sft-stage2", "kd"):
        e = ctx.manifest.entry(kind)
        if e is not None and e.status == "completed":
            models.append((kind, load_checkpoint(ctx.input(STUDENT_CKPTS[kind]))))
    if teacher is not None:
        models.append(("teacher", teacher))
    if not models:
        raise StageError("nothing to evaluate")
    tasks = sorted({str(s.attributes.get("subcategory", "unknown")) for s in test})
    rows, summary = [], {}
    for name, m in models:
        res = evaluate(m, test, decode, teacher=teacher if name != "teacher" else None,
                       seed=ctx.cfg.seed)
        ctx.output(f"reports/eval_{name}.json").write_text(res.to_json() + "\n", encoding="utf-8")
        row = {"model": name, **{f"acc_{t}": res.per_task.get(t, float("nan")) for t in tasks}}
        row["acc_avg"] = float(np.mean([row[f"acc_{t}"] for t in tasks]))
        row["accuracy"] = res.accuracy
        row["kl_median"] = res.kl_median if res.kl_median is not None else float("nan")
        row["perplexity"] = res.perplexity
        rows.append(row)
        summary[name] = res.summary()
    fields = ["model", *[f"acc_{t}" for t in tasks], "acc_avg", "accuracy", "kl_median", "perplexity"]
    with open(ctx.output("reports/eval.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in fields})
    plot_grid(rows, "model", [f"acc_{t}" for t in tasks], ctx.output("reports/eval.png"),
              title="test exact match")
    return {name: {"accuracy": s["accuracy"], "kl_median": s["kl_median"]} for name, s in summary.items()}


STAGES = {
    "curate": stage_curate,
    "teacher": stage_teacher,
    "sft-stage1": stage_sft1,
    "sft-stage2": stage_sft2,
    "kd": stage_kd,
    "eval": stage_eval,
}


def _stage_block(cfg: PipelineConfig, kind: str) -> dict:
    r = cfg.resolved
    blocks = {
        "curate": {"data": r["data"]},
        "teacher": {"teacher": r["teacher"], "model": r["model"]},
        "sft-stage1": {"curriculum": r["curriculum"], "model": r["model"]},
        "sft-stage2": {"curriculum": r["curriculum"], "model": r["model"]},
        "kd": {"distillation": r["distillation"], "teacher": r["teacher"], "model": r["model"]},
        "eval": {"eval": r["eval"]},
    }
    return blocks[kind]


def _discard(run_dir: Path, entry: StageEntry) -> None:
    for rel in entry.outputs:
        p = run_dir / rel
        if p.exists():
            p.unlink()


def run_pipeline(config, resume: bool = False) -> Path:
    """Execute the configured stages in order; returns the run directory."""
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.load(config)
    run_dir = run_dir_for(cfg)
    mpath = run_dir / "manifest.json"
    if mpath.exists():
        if not resume:
            raise ConfigError(f"run directory {run_dir} already exists; resume it or pick another run_id",
                              "/run_id")
        manifest = RunManifest.read(run_dir)
        if manifest.config_hash != cfg.hash():
            raise ConfigError(f"run directory {run_dir} was created from a different config", "/run_id")
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(run_dir.name, __version__, cfg.hash())
    for kind in cfg.stages:
        prev = manifest.entry(kind)
        if prev is not None and prev.status == "completed":
            for rel, want in prev.inputs.items():
                if rel in manifest.external_inputs:
                    continue
                got = file_sha256(run_dir / rel) if (run_dir / rel).exists() else "missing"
                if got != want:
                    raise IntegrityError(f"{rel} changed after stage {kind} consumed it "
                                         f"(recorded {want[:16]}, now {got[:16]})")
            log.info("stage %s already complete, skipping", kind)
            continue
        if prev is not None:
            _discard(run_dir, prev)
            manifest.stages.remove(prev)
        entry = StageEntry(kind, digest(_stage_block(cfg, kind)), cfg.seed)
        manifest.stages.append(entry)
        ctx = _Context(cfg, run_dir, manifest, entry)
        t0 = time.perf_counter()
        error: Exception | None = None
        try:
            entry.info = STAGES[kind](ctx)
            entry.status = "completed"
        except (ConfigError, IntegrityError, StageError) as exc:
            error = exc
        except Exception as exc:
            error = StageError(f"stage {kind} failed: {type(exc).__name__}: {exc}")
            error.__cause__ = exc
        entry.wall_time = round(time.perf_counter() - t0, 3)
        entry.outputs = {rel: file_sha256(run_dir / rel) for rel in sorted(set(ctx.written))
                         if (run_dir / rel).exists()}
        if error is not None:
            entry.status = "failed"
            entry.error = f"{type(error).__name__}: {error}"
        manifest.write(run_dir)
        if error is not None:
            raise error
        log.info("stage %s done in %.1fs", kind, entry.wall_time)
    return run_dir
