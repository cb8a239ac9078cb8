"""Command-line entry point: ``medaug <command> [<subcommand>] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import PROMPT_MODES, STRATEGIES, AugmentationPlan, StrategyChoice, run_augmentation
from .checkpoint import load_checkpoint, param_hash, save_checkpoint
from .classifier import ClassifierConfig, ClassifierModel, clf_train, score_corpus
from .corpus import CorpusSplit, SynthBenchSpec, build_vocab, load_jsonl, make_split, save_jsonl, synth_benchmark
from .distill import DistillConfig, PipelineStageError, factory_for, pretrain_teacher, train_student
from .experiment import ConfigError, load_config, rebuild_report, run_experiment
from .genlm import GeneratorConfig, GeneratorModel, PromptSpec, lm_finetune, sample_many
from .metrics import evaluate, pr_curve, roc_curve, write_curve_csv

log = logging.getLogger("medaug")

EXIT_ERROR, EXIT_CONFIG, EXIT_STAGE = 1, 2, 3


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_corpus_gen(args) -> int:
    spec = SynthBenchSpec(
        n_docs=args.n_docs, positive_fraction=args.positive_fraction, label_noise=args.label_noise,
        cross_rate=args.cross_rate, seed=args.seed,
    )
    split = make_split(synth_benchmark(spec), seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        docs = getattr(split, name)
        save_jsonl(docs, out / f"{name}.jsonl")
        log.info("%s: %d notes (%d positive)", name, len(docs), sum(d.label for d in docs))
    return 0


def cmd_lm_train(args) -> int:
    train = load_jsonl(args.train)
    vocab = build_vocab(train, min_freq=args.min_freq)
    cfg = GeneratorConfig(d_model=args.d_model, n_heads=args.n_heads, n_layers=args.n_layers,
                          context_len=args.context_len, epochs=args.epochs, lr=args.lr)
    model = GeneratorModel.init(vocab, cfg, args.seed)
    _, history = lm_finetune(model, train, balanced=args.balanced, seed=args.seed)
    save_checkpoint(model, args.out)
    log.info("loss by epoch: %s", ", ".join(f"{x:.4f}" for x in history))
    return 0


def cmd_lm_sample(args) -> int:
    model = load_checkpoint(args.model)
    contexts = []
    if args.context_from:
        contexts = [d.tokens[:2] for d in load_jsonl(args.context_from) if d.label == args.label]
    prompts = [
        PromptSpec(label=args.label, context=list(contexts[i % len(contexts)]) if contexts else [],
                   temperature=args.temperature, top_k=args.top_k, seed=args.seed + i)
        for i in range(args.n)
    ]
    docs = [d for d in sample_many(model, prompts, [f"sample-{args.seed}-{i}" for i in range(args.n)]) if d]
    if args.out:
        save_jsonl(docs, args.out)
    else:
        for d in docs:
            print(d.text)
    return 0


def _clf_config(args) -> ClassifierConfig:
    return ClassifierConfig(embed_dim=args.embed_dim, hidden_dim=args.hidden_dim, epochs=args.epochs, lr=args.lr)


def cmd_clf_train(args) -> int:
    train = load_jsonl(args.train)
    model = ClassifierModel.init(build_vocab(train, min_freq=args.min_freq), _clf_config(args), args.seed)
    _, history = clf_train(model, train, seed=args.seed)
    save_checkpoint(model, args.out)
    log.info("loss by epoch: %s", ", ".join(f"{x:.4f}" for x in history))
    return 0


def cmd_augment(args) -> int:
    train = load_jsonl(args.train)
    g = load_checkpoint(args.model) if args.strategy != "none" else None
    plan = AugmentationPlan(count=args.count, prompt_mode=args.prompt_mode, dedup=not args.no_dedup, seed=args.seed)
    strategy = StrategyChoice(args.strategy, keep_fraction=args.keep_fraction, tau=args.tau)
    split = CorpusSplit(train=train, valid=[], test=[])
    result = run_augmentation(split, g, plan, strategy, vocab=build_vocab(train, min_freq=args.min_freq))
    save_jsonl(result.combined, args.out)
    report = dict(result.report, apply_kl=result.apply_kl)
    _write_json(report, args.report)
    return 0


def cmd_distill(args) -> int:
    train = load_jsonl(args.train)
    combined = load_jsonl(args.combined)
    vocab = build_vocab(train, min_freq=args.min_freq)
    clf = _clf_config(args)
    cfg = DistillConfig(tau=args.tau, kl_scope=args.kl_scope, direction=args.direction,
                        teacher=clf, student=clf, seed=args.seed)
    factory = factory_for(vocab)
    teacher = pretrain_teacher(factory, train, cfg)
    student, history = train_student(factory, combined, teacher, cfg)
    save_checkpoint(student, args.out)
    if args.teacher_out:
        save_checkpoint(teacher, args.teacher_out)
    _write_json(
        {"tau": cfg.tau, "kl_scope": cfg.kl_scope, "direction": cfg.direction, "seed": cfg.seed,
         "teacher_hash": param_hash(teacher), "student_hash": param_hash(student),
         "loss": [vars(b) for b in history]},
        args.report,
    )
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    if not isinstance(model, ClassifierModel):
        raise ValueError(f"{args.model} is not a classifier checkpoint")
    sp = score_corpus(model, load_jsonl(args.data))
    if args.curves_dir:
        out = Path(args.curves_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_curve_csv(roc_curve(sp), out / "roc.csv", "fpr", "tpr")
        write_curve_csv(pr_curve(sp), out / "pr.csv", "recall", "precision")
    _write_json(evaluate(sp), args.out)
    return 0


def cmd_experiment_run(args) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg, args.out_dir)
    print(table.to_markdown(cfg.name))
    return 0


def cmd_report(args) -> int:
    rebuild_report(args.run_dir)
    print((Path(args.run_dir) / "summary.md").read_text(encoding="utf-8"), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medaug", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus").add_subparsers(dest="sub", required=True)
    g = corpus.add_parser("gen", help="write a benchmark corpus as train/valid/test JSONL")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-docs", type=int, default=5000)
    g.add_argument("--positive-fraction", type=float, default=0.2)
    g.add_argument("--label-noise", type=float, default=0.0)
    g.add_argument("--cross-rate", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_corpus_gen)

    lm = sub.add_parser("lm").add_subparsers(dest="sub", required=True)
    t = lm.add_parser("train", help="fine-tune the mini language model on label-prefixed notes")
    t.add_argument("--train", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--balanced", action="store_true")
    t.add_argument("--d-model", type=int, default=64)
    t.add_argument("--n-heads", type=int, default=2)
    t.add_argument("--n-layers", type=int, default=2)
    t.add_argument("--context-len", type=int, default=128)
    t.add_argument("--epochs", type=int, default=4)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--min-freq", type=int, default=2)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_lm_train)
    s = lm.add_parser("sample", help="sample notes from a tuned generator")
    s.add_argument("--model", required=True)
    s.add_argument("--label", type=int, choices=(0, 1), default=1)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--context-from", help="JSONL notes whose first two tokens seed the prompts")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--top-k", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_lm_sample)

    def clf_args(q):
        q.add_argument("--embed-dim", type=int, default=32)
        q.add_argument("--hidden-dim", type=int, default=32)
        q.add_argument("--epochs", type=int, default=8)
        q.add_argument("--lr", type=float, default=0.01)
        q.add_argument("--min-freq", type=int, default=2)
        q.add_argument("--seed", type=int, default=0)

    clf = sub.add_parser("clf").add_subparsers(dest="sub", required=True)
    c = clf.add_parser("train", help="train a classifier on labeled notes")
    c.add_argument("--train", required=True)
    c.add_argument("--out", required=True)
    clf_args(c)
    c.set_defaults(func=cmd_clf_train)

    a = sub.add_parser("augment", help="generate synthetic positives and build D_combined")
    a.add_argument("--train", required=True)
    a.add_argument("--model", help="tuned generator checkpoint (not needed for --strategy none)")
    a.add_argument("--count", type=int, default=900)
    a.add_argument("--strategy", choices=STRATEGIES, default="base")
    a.add_argument("--keep-fraction", type=float, default=0.5)
    a.add_argument("--tau", type=float, default=1.0)
    a.add_argument("--prompt-mode", choices=PROMPT_MODES, default="with_context")
    a.add_argument("--no-dedup", action="store_true")
    a.add_argument("--min-freq", type=int, default=2)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.add_argument("--report")
    a.set_defaults(func=cmd_augment)

    d = sub.add_parser("distill", help="pre-train a teacher and train a KL-guided student")
    d.add_argument("--train", required=True)
    d.add_argument("--combined", required=True)
    d.add_argument("--tau", type=float, default=1.0)
    d.add_argument("--kl-scope", choices=("all", "synthetic"), default="all")
    d.add_argument("--direction", choices=("teacher_student", "student_teacher"), default="teacher_student")
    d.add_argument("--out", required=True)
    d.add_argument("--teacher-out")
    d.add_argument("--report")
    clf_args(d)
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("eval", help="AUROC / AUPRC / RP80 of a classifier on labeled notes")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--curves-dir")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment").add_subparsers(dest="sub", required=True)
    r = x.add_parser("run", help="run every configured cell for every seed")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_experiment_run)

    rep = sub.add_parser("report", help="rebuild CSV and Markdown tables from runs.jsonl")
    rep.add_argument("--run-dir", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
