"""Command-line pipeline driver.

Subcommands: gen-data, train-teacher, distill, train-student, translate,
evaluate, analyze.  Every command resolves one RunConfig (YAML file plus
dotted-key overrides), locks its run directory, and writes a resolved
config snapshot beside its outputs so seeded reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_digest, load_model, save_checkpoint
from .config import RunConfig, RunLock, load_config, default_config, run_dir, write_resolved
from .corpora import read_pairs, read_sentences, write_json, write_pairs, write_sentences
from .distill import (
    MONOLINGUAL,
    PARALLEL,
    dedup_adjacent,
    distill_corpus,
    mix_monolingual,
    strip_origin,
)
from .evaluate import b_sweep, bucket_bleu, corpus_bleu, loss_gap_analysis, write_loss_gap_plot
from .lengths import LengthPolicy, estimate_C, length_parallel_decode_corpus
from .nar import NARTransformer
from .tasks import generate_corpus, generate_monolingual
from .training import dataset_loss, init_student_from_teacher, train
from .transformer import AR, NAR, Transformer
from .vocab import N_RESERVED


class CommandError(RuntimeError):
    """User-facing failure: printed to stderr, exit code 2."""


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CommandError(f"missing input {path} ({hint})")
    return path


def _resolve(args) -> RunConfig:
    overrides = list(args.set or [])
    if args.config:
        return load_config(args.config, overrides)
    return default_config(overrides)


def _load_student(path) -> NARTransformer:
    model = load_model(path)
    if model.config.flavor != NAR:
        raise CommandError(f"{path} holds an {model.config.flavor} model, expected NAR")
    return model


def _load_teacher(path) -> Transformer:
    model = load_model(path)
    if model.config.flavor != AR:
        raise CommandError(f"{path} holds a {model.config.flavor} model, expected AR")
    return model


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = run_dir(cfg)
    with RunLock(out):
        write_resolved(cfg, out)
        corpus = generate_corpus(cfg.task, cfg.data.n_pairs, cfg.data.seed)
        n_mono = int(round(cfg.data.n_pairs * cfg.data.mono_ratio))
        mono = generate_monolingual(cfg.task, n_mono, cfg.data.seed) if n_mono else []
        data_dir = out / "data"
        for split, pairs in corpus.items():
            write_pairs(data_dir, split, pairs)
        write_sentences(data_dir / "mono.txt", mono)
        write_json(data_dir / "meta.json", {
            "task": cfg.task.to_dict(),
            "sizes": {k: len(v) for k, v in corpus.items()},
            "mono_size": len(mono),
            "vocab_size": cfg.task.n_content + N_RESERVED,
            "seed": cfg.data.seed,
        })
    for split, pairs in corpus.items():
        print(f"{split}: {len(pairs)} pairs")
    print(f"mono: {len(mono)} sentences")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _resolve(args)
    out = run_dir(cfg)
    data_dir = out / "data"
    _require(data_dir / "train.src", "run gen-data first")
    with RunLock(out):
        write_resolved(cfg, out)
        train_pairs = read_pairs(data_dir, "train")
        valid_pairs = read_pairs(data_dir, "valid")
        model = Transformer(cfg.model_config(AR), seed=cfg.train.seed)
        records = train(model, train_pairs, cfg.train, valid_pairs,
                        curves_path=out / "teacher_curves.jsonl", log=print)
        save_checkpoint(out / "teacher.ckpt", model.config, model.params, {
            "role": "teacher",
            "task": cfg.task.to_dict(),
            "train": cfg.train.to_dict(),
            "epochs": len(records),
            "final_valid_loss": records[-1].valid_loss,
        })
    print(f"teacher: {len(records)} epochs, final valid loss "
          f"{records[-1].valid_loss:.4f} -> {out / 'teacher.ckpt'}")
    return 0


def cmd_distill(args) -> int:
    cfg = _resolve(args)
    out = run_dir(cfg)
    teacher_path = Path(args.teacher) if args.teacher else out / "teacher.ckpt"
    _require(teacher_path, "run train-teacher first")
    data_dir = out / "data"
    _require(data_dir / "train.src", "run gen-data first")
    digest = checkpoint_digest(teacher_path)
    dist_dir = out / "distill"
    meta_path = dist_dir / "meta.json"
    if meta_path.exists():
        old = json.loads(meta_path.read_text())
        if old.get("teacher_digest") != digest:
            raise CommandError(
                f"distilled corpus in {dist_dir} was produced by a different "
                f"teacher (digest {old.get('teacher_digest')} != {digest}); "
                f"remove the directory to re-distill"
            )
    with RunLock(out):
        write_resolved(cfg, out)
        teacher = _load_teacher(teacher_path)
        counts, dropped = {}, {}
        for split in ("train", "valid", "test"):
            srcs = [s for s, _ in read_pairs(data_dir, split)]
            triples, n_drop = distill_corpus(teacher, srcs, PARALLEL)
            write_pairs(dist_dir, split, [(s, t) for s, t, _ in triples])
            counts[split], dropped[split] = len(triples), n_drop
        mono_srcs = read_sentences(data_dir / "mono.txt")
        triples, n_drop = distill_corpus(teacher, mono_srcs, MONOLINGUAL)
        write_pairs(dist_dir, "mono", [(s, t) for s, t, _ in triples])
        counts["mono"], dropped["mono"] = len(triples), n_drop
        write_json(meta_path, {
            "teacher_digest": digest,
            "counts": counts,
            "dropped": dropped,
        })
    for split, n in counts.items():
        print(f"{split}: {n} distilled pairs ({dropped[split]} dropped)")
    return 0


def cmd_train_student(args) -> int:
    cfg = _resolve(args)
    out = run_dir(cfg)
    if not args.teacher:
        raise CommandError("train-student requires --teacher (the student "
                           "inherits the teacher's encoder and embeddings)")
    teacher_path = _require(Path(args.teacher), "run train-teacher first")
    dist_dir = out / "distill"
    _require(dist_dir / "train.src", "run distill first")
    with RunLock(out):
        write_resolved(cfg, out)
        teacher = _load_teacher(teacher_path)
        par = [(s, t, PARALLEL) for s, t in read_pairs(dist_dir, "train")]
        mono = [(s, t, MONOLINGUAL) for s, t in read_pairs(dist_dir, "mono")]
        mixed = strip_origin(mix_monolingual(par, mono, cfg.distill.mono_fraction,
                                             cfg.distill.mix_seed))
        valid_pairs = read_pairs(dist_dir, "valid")
        student = NARTransformer(cfg.model_config(NAR), seed=cfg.train.seed)
        if student.config.vocab_size != teacher.config.vocab_size:
            raise CommandError(
                f"teacher vocab {teacher.config.vocab_size} does not match "
                f"configured task vocab {student.config.vocab_size}"
            )
        init_student_from_teacher(teacher.params, student.params)
        records = train(student, mixed, cfg.train, valid_pairs,
                        curves_path=out / "student_curves.jsonl", log=print)
        C_hat = estimate_C(mixed)
        save_checkpoint(out / "student.ckpt", student.config, student.params, {
            "role": "student",
            "task": cfg.task.to_dict(),
            "train": cfg.train.to_dict(),
            "mono_fraction": cfg.distill.mono_fraction,
            "length_offset": C_hat,
            "epochs": len(records),
            "final_valid_loss": records[-1].valid_loss,
        })
        test_pairs = read_pairs(dist_dir, "test")
        eval_report = {
            "train_loss": records[-1].train_loss,
            "valid_loss": records[-1].valid_loss,
            "test_loss": dataset_loss(student, test_pairs,
                                      cfg.train.label_smoothing),
            "mono_fraction": cfg.distill.mono_fraction,
            "epochs": len(records),
        }
        write_json(out / "student_eval.json", eval_report)
    print(f"student: {len(records)} epochs, C={C_hat}, "
          f"train {eval_report['train_loss']:.4f} "
          f"test {eval_report['test_loss']:.4f} -> {out / 'student.ckpt'}")
    return 0


def cmd_translate(args) -> int:
    from .checkpoint import load_checkpoint

    cfg = _resolve(args)
    out = run_dir(cfg)
    student_path = Path(args.student) if args.student else out / "student.ckpt"
    s_cfg, s_params, s_extra = load_checkpoint(
        _require(student_path, "run train-student first")
    )
    if s_cfg.flavor != NAR:
        raise CommandError(f"{student_path} holds an {s_cfg.flavor} model, expected NAR")
    student = NARTransformer(s_cfg, s_params)
    srcs = read_sentences(_require(Path(args.input), "input sentence file"))
    with RunLock(out):
        write_resolved(cfg, out)
    length = cfg.length
    if args.gold_lengths:
        refs = read_sentences(Path(args.gold_lengths))
        if len(refs) != len(srcs):
            raise CommandError(
                f"--gold-lengths file has {len(refs)} lines but input has "
                f"{len(srcs)}"
            )
        hyps = [None] * len(srcs)
        by_shape: dict = {}
        for i, (s, r) in enumerate(zip(srcs, refs)):
            by_shape.setdefault((len(s), len(r)), []).append(i)
        for (_, lt), idxs in sorted(by_shape.items()):
            emitted = student.nar_greedy_emit_batch([srcs[i] for i in idxs], lt)
            for i, h in zip(idxs, emitted):
                hyps[i] = h
    else:
        teacher = _load_teacher(args.teacher if args.teacher else out / "teacher.ckpt")
        C = length.C if length.C is not None else int(s_extra.get("length_offset", 0))
        policy = LengthPolicy(C=C, B=length.B)
        hyps = length_parallel_decode_corpus(student, teacher, srcs, policy,
                                             length.rank_mode)
    if length.dedup:
        hyps = [dedup_adjacent(h) for h in hyps]
    write_sentences(Path(args.output), hyps)
    print(f"translated {len(srcs)} sentences -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    hyps = read_sentences(_require(Path(args.hyp), "hypothesis file"))
    refs = read_sentences(_require(Path(args.ref), "reference file"))
    report = corpus_bleu(hyps, refs, smooth=args.smooth,
                         case_insensitive=args.case_insensitive)
    precisions = " ".join(f"P{i + 1} {p * 100:.1f}" for i, p in
                          enumerate(report.precisions))
    print(f"BLEU {report.bleu:.2f}  BP {report.brevity_penalty:.3f}  "
          f"{precisions}  hyp {report.hyp_tokens}  ref {report.ref_tokens}")
    if args.output:
        write_json(Path(args.output), {
            "bleu": report.bleu,
            "precisions": report.precisions,
            "brevity_penalty": report.brevity_penalty,
            "hyp_tokens": report.hyp_tokens,
            "ref_tokens": report.ref_tokens,
            "smooth": bool(args.smooth),
        })
    return 0


def _parse_tagged(items, what: str) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise CommandError(f"{what} {item!r} must look like NAME=PATH")
        name, path = item.split("=", 1)
        out[name] = path
    if not out:
        raise CommandError(f"at least one {what} is required")
    return out


def cmd_analyze(args) -> int:
    if args.kind == "loss-gap":
        tagged = _parse_tagged(args.run, "--run FRACTION=DIR")
        runs = {}
        for frac, d in tagged.items():
            path = _require(Path(d) / "student_eval.json",
                            "train-student writes it")
            runs[float(frac)] = json.loads(path.read_text())
        rows = loss_gap_analysis(runs)
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            fh.write("# fraction train_loss test_loss gap\n")
            for r in rows:
                fh.write(f"{r.fraction} {r.train_loss:.6f} {r.test_loss:.6f} "
                         f"{r.gap:.6f}\n")
        write_loss_gap_plot(out.with_suffix(".dat"), rows)
        for r in rows:
            print(f"fraction {r.fraction}: train {r.train_loss:.4f} "
                  f"test {r.test_loss:.4f} gap {r.gap:.4f}")
        return 0

    if args.kind == "b-sweep":
        students = {name: _load_student(_require(Path(p), "student checkpoint"))
                    for name, p in _parse_tagged(args.student, "--student NAME=CKPT").items()}
        teacher = _load_teacher(_require(Path(args.teacher), "teacher checkpoint"))
        pairs = read_pairs(Path(args.data), "test")
        B_values = [int(b) for b in args.b_values.split(",")]
        C = int(args.length_offset)
        report = b_sweep(students, teacher, pairs, B_values, C,
                         rank_mode=args.rank_mode, smooth=args.smooth)
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            fh.write("# variant B bleu\n")
            for name in sorted(report["cells"]):
                for B in report["B_values"]:
                    fh.write(f"{name} {B} {report['cells'][name][B]:.4f}\n")
                fh.write(f"{name} gold {report['gold'][name]:.4f}\n")
        for name in sorted(report["cells"]):
            cells = "  ".join(f"B={B}: {report['cells'][name][B]:.2f}"
                              for B in report["B_values"])
            print(f"{name}: {cells}  gold: {report['gold'][name]:.2f}")
        return 0

    # buckets
    hyps = read_sentences(_require(Path(args.hyp), "hypothesis file"))
    refs = read_sentences(_require(Path(args.ref), "reference file"))
    srcs = read_sentences(_require(Path(args.src), "source file"))
    edges = tuple(
        tuple(int(x) for x in part.split("-"))
        for part in args.edges.split(",")
    ) if args.edges else None
    kwargs = {"smooth": args.smooth}
    if edges:
        kwargs["bucket_edges"] = edges
    table = bucket_bleu(hyps, refs, srcs, **kwargs)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("# lo hi count bleu\n")
        for row in table.rows:
            bleu = "absent" if row.bleu is None else f"{row.bleu:.4f}"
            fh.write(f"{row.interval[0]} {row.interval[1]} {row.count} {bleu}\n")
    for row in table.rows:
        bleu = "absent" if row.bleu is None else f"{row.bleu:.2f}"
        print(f"[{row.interval[0]}, {row.interval[1]}]: n={row.count} BLEU {bleu}")
    print(f"total {table.total_count}")
    return 0


# ---------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("-c", "--config", help="YAML run configuration file")
    p.add_argument("-O", "--set", action="append", metavar="KEY=VALUE",
                   help="dotted-path config override, e.g. train.peak_lr=0.01")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="narlab",
        description="non-autoregressive translation lab: distill an AR "
                    "teacher into a parallel-decoding student",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic corpora")
    _add_config_args(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the AR teacher")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("distill", help="decode all sources with the teacher")
    _add_config_args(p)
    p.add_argument("--teacher", help="teacher checkpoint (default: run dir)")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("train-student", help="train the NAR student")
    _add_config_args(p)
    p.add_argument("--teacher", help="teacher checkpoint (required)")
    p.set_defaults(fn=cmd_train_student)

    p = sub.add_parser("translate", help="length-parallel decode a file")
    _add_config_args(p)
    p.add_argument("-i", "--input", required=True, help="source sentence file")
    p.add_argument("-o", "--output", required=True, help="hypothesis file to write")
    p.add_argument("--student", help="student checkpoint (default: run dir)")
    p.add_argument("--teacher", help="teacher checkpoint for reranking")
    p.add_argument("--half-width", type=int, metavar="B",
                   help="candidate half-width (override of length.B)")
    p.add_argument("--rank-mode", choices=("sum_logprob", "mean_logprob"),
                   help="override of length.rank_mode")
    dedup = p.add_mutually_exclusive_group()
    dedup.add_argument("--dedup", action="store_true", default=None,
                       help="collapse adjacent duplicate tokens")
    dedup.add_argument("--no-dedup", dest="dedup", action="store_false",
                       help="keep raw emissions")
    p.add_argument("--gold-lengths", metavar="REF_FILE",
                   help="decode at each reference's true length (no reranking)")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("-o", "--output", help="also write a JSON report here")
    p.add_argument("--smooth", action="store_true",
                   help="add-one smoothing for orders >= 2")
    p.add_argument("--case-insensitive", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("analyze", help="paper-style analyses")
    asub = p.add_subparsers(dest="kind", required=True)

    q = asub.add_parser("loss-gap", help="train/test loss gap vs mono fraction")
    q.add_argument("--run", action="append", metavar="FRACTION=DIR",
                   required=True)
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(fn=cmd_analyze)

    q = asub.add_parser("b-sweep", help="BLEU vs candidate half-width")
    q.add_argument("--student", action="append", metavar="NAME=CKPT",
                   required=True)
    q.add_argument("--teacher", required=True)
    q.add_argument("--data", required=True,
                   help="directory holding test.src / test.tgt references")
    q.add_argument("--b-values", default="0,1,2,3")
    q.add_argument("--length-offset", default="0", metavar="C")
    q.add_argument("--rank-mode", choices=("sum_logprob", "mean_logprob"),
                   default="sum_logprob")
    q.add_argument("--smooth", action="store_true")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(fn=cmd_analyze)

    q = asub.add_parser("buckets", help="BLEU by source-length bucket")
    q.add_argument("--hyp", required=True)
    q.add_argument("--ref", required=True)
    q.add_argument("--src", required=True)
    q.add_argument("--edges", help="comma list of lo-hi intervals, e.g. 1-6,7-9,10-12")
    q.add_argument("--smooth", action="store_true")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(fn=cmd_analyze)

    return parser


def _fold_translate_flags(args) -> None:
    """Surface translate's convenience flags as config overrides so the
    resolved snapshot records what actually ran."""
    extra = []
    if getattr(args, "half_width", None) is not None:
        extra.append(f"length.B={args.half_width}")
    if getattr(args, "rank_mode", None):
        extra.append(f"length.rank_mode={args.rank_mode}")
    if getattr(args, "dedup", None) is not None:
        extra.append(f"length.dedup={'true' if args.dedup else 'false'}")
    if extra:
        args.set = list(args.set or []) + extra


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "translate":
        _fold_translate_flags(args)
    try:
        return args.fn(args)
    except (CommandError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
