"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 integrity error.
"""
from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
import tempfile
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .curation import read_jsonl
from .distill import (
    STRATEGIES,
    DistillConfig,
    OnPolicyDataset,
    annotate_topk,
    build_strategy_dataset,
    read_annotations,
    train_distill,
    write_annotations,
)
from .errors import ConfigError, IntegrityError, StageError
from .evaluation.ablation import ABLATIONS, GRIDS, BaseRun
from .evaluation.metrics import evaluate
from .evaluation.tasks import Suite
from .manifest import MANIFEST_NAME, RunManifest, StageEntry, check_completeness
from .model import (
    DecodeConfig,
    TinyTransformer,
    Tokenizer,
    deserialize_checkpoint,
    load_checkpoint,
    save_checkpoint,
    student_config,
    teacher_config,
)
from .pipeline import _Context, distill_config, run_pipeline, stage_config, stage_curate
from .sft import StageConfig, run_stage

log = logging.getLogger("tinydistill")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_INTEGRITY = 0, 2, 3, 4


def _decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("greedy", "temperature"), default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-new", type=int, default=32)


def _stage_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--tokens-per-batch", type=int)
    p.add_argument("--lr", type=float, dest="peak_lr")
    p.add_argument("--min-lr", type=float)
    p.add_argument("--warmup", type=int, dest="warmup_steps")
    p.add_argument("--max-len", type=int)


def _stage_from_args(args, **defaults) -> StageConfig:
    over = {k: getattr(args, k) for k in ("epochs", "tokens_per_batch", "peak_lr", "min_lr",
                                          "warmup_steps", "max_len") if getattr(args, k) is not None}
    return StageConfig.from_dict({**defaults, **over})


def _tokenizer_for(path) -> Tokenizer:
    p = Path(path)
    if p.suffix == ".json":
        return Tokenizer.from_symbols(json.loads(p.read_text(encoding="utf-8")))
    return load_checkpoint(p).tokenizer


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tinydistill", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="build, filter, deduplicate and mix the task corpora")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train-sft", help="supervised fine-tuning on one corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--init", help="checkpoint to continue from")
    g.add_argument("--tokenizer", help="tokenizer.json (or checkpoint) for a fresh model")
    p.add_argument("--size", choices=("student", "teacher"), default="student")
    p.add_argument("--trace", action=argparse.BooleanOptionalAction, default=False,
                   help="supervise the reasoning trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="step log (JSONL)")
    _stage_args(p)

    p = sub.add_parser("gen-responses", help="build a response dataset under a strategy")
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="by-student")
    p.add_argument("--model", help="generator checkpoint (teacher or student)")
    p.add_argument("--tokenizer", help="tokenizer for by-label datasets")
    p.add_argument("--seed", type=int, default=0)
    _decode_args(p)

    p = sub.add_parser("annotate", help="store teacher top-k logits for a response dataset")
    p.add_argument("--teacher", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("train-kd", help="train a student on top-k annotations")
    p.add_argument("--student", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", help="teacher checkpoint (checked, and needed for refresh)")
    p.add_argument("--queries", help="query corpus (needed for refresh)")
    p.add_argument("--lambda", dest="lambda_kd", type=float, default=0.9)
    p.add_argument("--strategy", choices=STRATEGIES, default="by-student")
    p.add_argument("--refreshes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="step log (JSONL)")
    _stage_args(p)
    _decode_args(p)

    p = sub.add_parser("eval", help="exact-match accuracy, perplexity and KL to a teacher")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--teacher")
    p.add_argument("--out", help="write the full result (with generations) as JSON")
    p.add_argument("--seed", type=int, default=0)
    _decode_args(p)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("grid", choices=GRIDS + ("all",))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", help="teacher checkpoint (overrides the config)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = sub.add_parser("inspect", help="pretty-print an annotation file, checkpoint or manifest")
    p.add_argument("path")
    p.add_argument("--records", type=int, default=3, help="records to show")

    p = sub.add_parser("run", help="run the configured pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-root")
    p.add_argument("--run-id")
    return ap


# -- commands ---------------------------------------------------------------------

def cmd_curate(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = Path(args.out)
    manifest = RunManifest(out.name, __version__, cfg.hash())
    entry = StageEntry("curate", cfg.hash(), cfg.seed)
    manifest.stages.append(entry)
    ctx = _Context(cfg, out, manifest, entry)
    final = stage_curate(ctx)
    print(json.dumps(final, sort_keys=True))
    return EXIT_OK


def cmd_train_sft(args) -> int:
    corpus = read_jsonl(args.corpus)
    if args.init:
        model = load_checkpoint(args.init)
    else:
        tok = _tokenizer_for(args.tokenizer)
        max_len = args.max_len or 64
        make = teacher_config if args.size == "teacher" else student_config
        model = TinyTransformer(make(tok.vocab_size, max_len, seed=args.seed), tok)
    if not args.trace:
        corpus = [s.without_trace() for s in corpus]
    stage = _stage_from_args(args, with_trace=args.trace,
                             max_len=args.max_len or model.config.max_len)
    _, steps = run_stage(model, stage, corpus, args.seed)
    model.note = f"train-sft seed {args.seed}"
    h = save_checkpoint(args.out, model)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for s in steps:
                fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
    print(f"{args.out} sha256={h.hex()} steps={len(steps)} final_loss={steps[-1].loss:.4f}")
    return EXIT_OK


def cmd_gen_responses(args) -> int:
    queries = read_jsonl(args.queries)
    decode = DecodeConfig(args.mode, args.temperature, args.max_new)
    model = load_checkpoint(args.model) if args.model else None
    if model is not None:
        tok = model.tokenizer
    elif args.tokenizer:
        tok = _tokenizer_for(args.tokenizer)
    else:
        raise ConfigError("give --model (or --tokenizer for by-label)", "/model")
    ds = build_strategy_dataset(args.strategy, queries, tok,
                                teacher=model if args.strategy == "by-teacher" else None,
                                student=model if args.strategy == "by-student" else None,
                                decode_cfg=decode, seed=args.seed)
    ds.write(args.out)
    print(f"{args.out}: {len(ds)} records")
    return EXIT_OK


def cmd_annotate(args) -> int:
    teacher = load_checkpoint(args.teacher)
    ds = OnPolicyDataset.read(args.dataset)
    ann = annotate_topk(teacher, ds, args.k)
    h = write_annotations(args.out, ann)
    print(f"{args.out} sha256={h.hex()} records={len(ann)} skipped={len(ann.skipped)} k={args.k}")
    for s in ann.skipped:
        print(f"  skipped {s['sample_id']}: {s['reason']}")
    return EXIT_OK


def cmd_train_kd(args) -> int:
    student = load_checkpoint(args.student)
    ann = read_annotations(args.annotations)
    teacher = load_checkpoint(args.teacher) if args.teacher else None
    queries = read_jsonl(args.queries) if args.queries else None
    cfg = DistillConfig(lambda_kd=args.lambda_kd, k=ann.k, strategy=args.strategy,
                        refreshes=args.refreshes,
                        decode=DecodeConfig(args.mode, args.temperature, args.max_new))
    stage = _stage_from_args(args, with_trace=False, max_len=args.max_len or student.config.max_len)
    student, dlog = train_distill(student, ann, cfg, stage, args.seed, teacher, queries)
    student.note = f"train-kd {args.strategy} seed {args.seed}"
    h = save_checkpoint(args.out, student)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for s in dlog.steps:
                fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
    last = dlog.steps[-1]
    print(f"{args.out} sha256={h.hex()} steps={len(dlog.steps)} refreshes={len(dlog.refreshes)} "
          f"l_ce={last.l_ce:.4f} l_kd={last.l_kd:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    teacher = load_checkpoint(args.teacher) if args.teacher else None
    test = read_jsonl(args.test)
    res = evaluate(model, test, DecodeConfig(args.mode, args.temperature, args.max_new), teacher,
                   seed=args.seed)
    if args.out:
        Path(args.out).write_text(res.to_json() + "\n", encoding="utf-8")
    print(json.dumps(res.summary(), indent=1, sort_keys=True))
    return EXIT_OK


def base_run_from_config(cfg: PipelineConfig, seeds, teacher_path=None) -> BaseRun:
    """Base run for the grids: curated data in memory, teacher loaded or trained."""
    tmp = RunManifest("ablate", __version__, cfg.hash())
    entry = StageEntry("curate", cfg.hash(), cfg.seed)
    tmp.stages.append(entry)
    with tempfile.TemporaryDirectory() as d:
        ctx = _Context(cfg, Path(d), tmp, entry)
        stage_curate(ctx)
        stage1, stage2, test = (read_jsonl(Path(d) / f"data/{n}.jsonl") for n in ("stage1", "stage2", "test"))
        tok = Tokenizer.from_symbols(json.loads((Path(d) / "data/tokenizer.json").read_text()))
    max_len = cfg.block("model", "max_len")
    teacher_path = teacher_path or cfg.block("teacher", "checkpoint")
    if teacher_path:
        teacher = load_checkpoint(teacher_path)
    else:
        t = cfg.block("teacher")
        teacher = TinyTransformer(teacher_config(tok.vocab_size, max_len, seed=t["seed"]), tok)
        run_stage(teacher, stage_config(t["train"], max_len=max_len, with_trace=False),
                  [s.without_trace() for s in stage2], cfg.seed + 100)
    cur = cfg.block("curriculum")
    dist = cfg.block("distillation")
    return BaseRun(
        teacher=teacher,
        suite=Suite(stage1, stage2, test),
        stage1=stage_config(cur["stage1"], max_len=max_len, with_trace=True),
        stage2=stage_config(cur["stage2"], max_len=max_len, with_trace=False),
        kd_stage=stage_config(dist["train"], max_len=max_len, with_trace=False),
        distill=distill_config(dist),
        eval_decode=DecodeConfig(**cfg.block("eval", "decode")),
        seeds=tuple(seeds),
        variant=cur["variant"],
        max_len=max_len,
    )


def cmd_ablate(args) -> int:
    cfg = PipelineConfig.load(args.config)
    base = base_run_from_config(cfg, args.seeds, args.teacher)
    grids = GRIDS if args.grid == "all" else (args.grid,)
    for g in grids:
        rep = ABLATIONS[g](base, args.out)
        print(f"{g}: {rep['csv']} {rep['figure']}")
        for row in rep["rows"]:
            label = next(iter(row.values()))
            print(f"  {label}: acc_avg={row['acc_avg']:.4f} kl_median={row['kl_median']:.4f}")
    return EXIT_OK


def _inspect_tklg(path: Path, n: int) -> None:
    ann = read_annotations(path)
    print(f"TKLG annotations: {path}")
    print(f"  tokenizer {ann.tokenizer_fp.hex()}")
    print(f"  teacher   {ann.teacher_fp.hex()}")
    print(f"  k={ann.k} vocab={ann.vocab_size} records={len(ann)}")
    for r in ann.records[:n]:
        print(f"  - sample {r.sample_id} generator {r.generator.hex()[:16]} "
              f"prompt={len(r.prompt)} response={len(r.response)}")
        for pos in range(min(3, len(r.response))):
            pairs = ", ".join(f"{int(i)}:{float(v):.3f}" for i, v in
                              zip(r.topk_ids[pos][:5], r.topk_logits[pos][:5]))
            print(f"      n={pos + 1} [{pairs}{', ...' if ann.k > 5 else ''}]")


def _inspect_checkpoint(path: Path) -> None:
    model, note = deserialize_checkpoint(path.read_bytes())
    n = sum(p.data.size for p in model.parameters())
    print(f"TDCK checkpoint: {path}")
    print(f"  config {json.dumps(model.config.to_dict(), sort_keys=True)}")
    print(f"  tokenizer {model.tokenizer.fingerprint.hex()} ({model.tokenizer.vocab_size} symbols)")
    print(f"  parameters {n} in {len(model.params)} tensors; note {note!r}")


def _inspect_manifest(path: Path) -> None:
    run_dir = path if path.is_dir() else path.parent
    m = RunManifest.read(path)
    print(f"run {m.run_id} (tool {m.tool_version}, config {m.config_hash[:16]})")
    for name, h in sorted(m.external_inputs.items()):
        print(f"  external {name}: {h[:16]}")
    for e in m.stages:
        print(f"  [{e.status}] {e.kind} seed={e.seed} config={e.config_hash[:12]} {e.wall_time:.1f}s")
        for rel, h in sorted(e.inputs.items()):
            print(f"      in  {rel} {h[:16]}")
        for rel, h in sorted(e.outputs.items()):
            print(f"      out {rel} {h[:16]}")
        if e.error:
            print(f"      error: {e.error}")
    problems = check_completeness(run_dir, m)
    print("  manifest complete" if not problems else "  incomplete: " + "; ".join(problems))


def cmd_inspect(args) -> int:
    p = Path(args.path)
    if p.is_dir() or p.name == MANIFEST_NAME:
        _inspect_manifest(p)
        return EXIT_OK
    with open(p, "rb") as fh:
        head = fh.read(4)
    if head == b"TKLG":
        _inspect_tklg(p, args.records)
    elif head == b"TDCK":
        _inspect_checkpoint(p)
    elif p.suffix == ".jsonl":
        rows = [json.loads(ln) for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]
        kind = rows[0].get("kind", "corpus") if rows else "empty"
        print(f"{p}: {kind}, {len(rows)} line(s)")
        for r in rows[:args.records + 1]:
            print("  " + json.dumps(r, sort_keys=True)[:160])
    else:
        raise IntegrityError(f"{p}: unrecognised file type (magic {head!r})", 0)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = PipelineConfig.load(args.config).override(seed=args.seed, output_root=args.output_root,
                                                     run_id=args.run_id)
    run_dir = run_pipeline(cfg, resume=args.resume)
    print(run_dir)
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "train-sft": cmd_train_sft,
    "gen-responses": cmd_gen_responses,
    "annotate": cmd_annotate,
    "train-kd": cmd_train_kd,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (StageError, ValueError, OSError, struct.error) as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
