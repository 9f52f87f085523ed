"""Command-line interface.

Verbs mirror the experiment pipeline: ingest, stats, sample, train, transfer,
structshot, eval, matrix, sweep-ft, sweep-tl, probe, export-emb. Dataset
roots follow the ``<root>/<category>/<split>.txt`` layout; every config-file
field has a CLI override.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation, harness, sampling, structshot, tagger
from .corpus import (
    CATEGORIES,
    Corpus,
    load_viem_dataset,
    nononly_proportion,
    parse_conll,
    render_stats_csv,
    render_stats_text,
    serialize_conll,
    stats_rows,
    validate_category,
)
from .harness import ExperimentConfig
from .sampling import SamplingSpec


def _add_root(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--root", required=True, help="dataset root directory")
    parser.add_argument(
        "--whitespace",
        action="store_true",
        help="split columns on any whitespace instead of tabs",
    )


def _load_root(args: argparse.Namespace) -> Corpus:
    return load_viem_dataset(args.root, delimiter=None if args.whitespace else "\t")


def _read_sentences(path: str, whitespace: bool = False):
    text = Path(path).read_text(encoding="utf-8")
    return parse_conll(text, delimiter=None if whitespace else "\t")


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig(encoder=getattr(args, "encoder", None) or "bert-large-cased")
    overrides = {
        "encoder": getattr(args, "encoder", None),
        "ft_proportion": getattr(args, "proportion", None),
        "tl_count": getattr(args, "count", None),
        "restarts": getattr(args, "restarts", None),
        "base_seed": getattr(args, "seed", None),
        "data_seed": getattr(args, "data_seed", None),
        "checkpoints_per_run": getattr(args, "checkpoints_per_run", None),
        "out_dir": getattr(args, "out", None),
        "batch_size": getattr(args, "batch_size", None),
        "precision": "half" if getattr(args, "fp16", False) else None,
    }
    settings = getattr(args, "settings", None)
    if settings:
        overrides["settings"] = tuple(s.strip() for s in settings.split(","))
    grid = getattr(args, "grid", None)
    if grid and grid != "default":
        cells = []
        for part in grid.split(";"):
            lr, epochs = part.split(",")
            cells.append((float(lr), int(epochs)))
        overrides["grid"] = tuple(cells)
    data = cfg.to_dict()
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Verbs


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    total = 0
    for (category, split), sentences in sorted(corpus.entries.items()):
        print(f"{category}/{split}: {len(sentences)} sentences")
        total += len(sentences)
    print(f"total: {total} sentences across {len(corpus)} files")
    if args.out:
        out = Path(args.out)
        for (category, split), sentences in corpus.entries.items():
            dest = out / category
            dest.mkdir(parents=True, exist_ok=True)
            (dest / f"{split}.txt").write_text(serialize_conll(sentences), encoding="utf-8")
        print(f"normalized copy written to {out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    rows = stats_rows(corpus)
    text = render_stats_text(rows)
    print(text, end="")
    try:
        all_prop = nononly_proportion(corpus, include_memc=True)
        rest_prop = nononly_proportion(corpus, include_memc=False)
        print(f"non-entity-only sentences, pooled training data (all): {all_prop:.4f}")
        print(f"non-entity-only sentences, pooled training data (w/o memc): {rest_prop:.4f}")
    except ValueError:
        pass
    if args.csv:
        Path(args.csv).write_text(render_stats_csv(rows), encoding="utf-8")
        print(f"csv written to {args.csv}")
    if args.text:
        Path(args.text).write_text(text, encoding="utf-8")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
        categories = (
            [validate_category(c) for c in args.category.split(",")]
            if args.category
            else list(c for c in CATEGORIES if c != "memc")
        )
        for k in counts:
            subsets = {}
            for category in categories:
                full = corpus.get(category, "train")
                spec = SamplingSpec(mode="count", value=k, seed=args.seed)
                split = sampling.make_fewsample_split(full, spec, source=(category, "train"))
                subsets[category] = split.train
                dest = out / f"k{k}" / category
                dest.mkdir(parents=True, exist_ok=True)
                (dest / "train.txt").write_text(serialize_conll(split.train), encoding="utf-8")
                (dest / "valid.txt").write_text(serialize_conll(split.valid), encoding="utf-8")
                sampling.write_manifest(dest / "manifest.json", split.provenance)
            if args.aggregate:
                agg = sampling.build_aggregate(subsets)
                (out / f"k{k}" / "aggregate.txt").write_text(
                    serialize_conll(agg), encoding="utf-8"
                )
                print(f"k={k}: aggregate of {len(agg)} sentences")
    else:
        category = validate_category(args.category or "memc")
        full = corpus.get(category, "train")
        spec = SamplingSpec(mode="proportion", value=args.proportion, seed=args.seed)
        split = sampling.make_fewsample_split(full, spec, source=(category, "train"))
        (out / "train.txt").write_text(serialize_conll(split.train), encoding="utf-8")
        (out / "valid.txt").write_text(serialize_conll(split.valid), encoding="utf-8")
        sampling.write_manifest(out / "manifest.json", split.provenance)
        print(
            f"{category}: sampled {len(split.train)} train / {len(split.valid)} valid "
            f"sentences to {out}"
        )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    config = _experiment_config(args)
    category = validate_category(args.category)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    best, info = harness.run_finetune_restarts(corpus, config, out_dir=out, category=category)
    best.save(out / "best.ckpt")
    (out / "manifest.json").write_text(
        json.dumps(
            {
                "config": config.to_dict(),
                "stage": info,
                "environment": harness.environment_fingerprint(),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"best checkpoint (step {best.step}, weighted F1 {best.weighted_f1:.4f}) -> {out}")
    summary = info["test_summary"]
    for metric in ("sn_f1", "sv_f1", "weighted_f1"):
        stats = summary[metric]
        print(f"{metric}: mean {stats['mean']:.4f} std {stats['std']:.4f} "
              f"over {config.restarts} restart(s)")
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    config = _experiment_config(args)
    source = tagger.Checkpoint.load(args.source)
    counts = [int(k) for k in str(args.counts).split(",")]
    records = harness.run_transfer_sweep(
        corpus,
        counts,
        "aggregate" if args.aggregate else "individual",
        config,
        source_checkpoint=source,
    )
    for record in records:
        print(f"{record.label}:")
        print(evaluation.render_comparison_text({record.label: record.mean_report}), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "transfer.csv").write_text(harness.sweep_csv(records), encoding="utf-8")
    return 0


def cmd_structshot(args: argparse.Namespace) -> int:
    support = _read_sentences(args.support, args.whitespace)
    test = _read_sentences(args.test, args.whitespace)
    checkpoint = tagger.Checkpoint.load(args.model)
    model = tagger.restore_model(checkpoint)
    transition_corpus = None
    if args.transitions_from:
        transition_corpus = [
            s.tags for s in _read_sentences(args.transitions_from, args.whitespace)
        ]
    predictions = structshot.structshot_tag(
        model, support, test, transition_corpus=transition_corpus, use_crf=not args.no_crf
    )
    tagged = [
        type(sent)(sent.tokens, tuple(tags), sent.source_id)
        for sent, tags in zip(test, predictions)
    ]
    output = serialize_conll(tagged)
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
        print(f"predictions for {len(test)} sentences written to {args.out}")
    else:
        print(output, end="")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gold = _read_sentences(args.gold, args.whitespace)
    pred = _read_sentences(args.pred, args.whitespace)
    gold_tags = [s.tags for s in gold]
    pred_tags = [s.tags for s in pred]
    fn = evaluation.span_prf if args.span_level else evaluation.token_prf
    report = fn(gold_tags, pred_tags)
    name = "span" if args.span_level else "token"
    print(evaluation.render_comparison_text({name: report}), end="")
    if args.out:
        Path(args.out).write_text(
            evaluation.render_comparison_csv({name: report}), encoding="utf-8"
        )
        print(f"report written to {args.out}")
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    config = _experiment_config(args)
    stages = harness.default_matrix_stages(corpus, config)
    results = harness.run_setting_matrix(config, stages)
    print(evaluation.render_comparison_text(results), end="")
    return 0


def cmd_sweep_ft(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    config = _experiment_config(args)
    proportions = [float(p) for p in args.proportions.split(",")]
    records = harness.run_finetune_sweep(corpus, proportions, config, force=args.force)
    print(harness.sweep_csv(records), end="")
    return 0


def cmd_sweep_tl(args: argparse.Namespace) -> int:
    corpus = _load_root(args)
    config = _experiment_config(args)
    counts = [int(k) for k in args.counts.split(",")]
    source = tagger.Checkpoint.load(args.source)
    records = harness.run_transfer_sweep(
        corpus, counts, args.mode, config, source_checkpoint=source, force=args.force
    )
    print(harness.sweep_csv(records), end="")
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    pool = _read_sentences(args.pool, args.whitespace)
    test = _read_sentences(args.test, args.whitespace)
    checkpoint = tagger.Checkpoint.load(args.model)
    model = tagger.restore_model(checkpoint)
    transition_corpus = None
    if args.transitions_from:
        transition_corpus = [
            s.tags for s in _read_sentences(args.transitions_from, args.whitespace)
        ]
    steps = harness.run_adversarial_probe(
        model,
        pool,
        test,
        transition_corpus=transition_corpus,
        threshold=args.threshold,
        use_crf=not args.no_crf,
    )
    output = harness.probe_csv(steps)
    print(output, end="")
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
    flagged = [s.support_size for s in steps if s.flagged]
    if flagged:
        print(f"flagged steps (SN F1 drop > {args.threshold}): {flagged}", file=sys.stderr)
    return 0


def cmd_export_emb(args: argparse.Namespace) -> int:
    sentences = _read_sentences(args.input, args.whitespace)
    checkpoint = tagger.Checkpoint.load(args.model)
    model = tagger.restore_model(checkpoint)
    n = harness.export_embeddings(model, sentences, args.out, fmt=args.format)
    print(f"{n} token embeddings ({model.hidden_size}d) written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewner",
        description="Few-sample NER for security vulnerability reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a dataset root")
    _add_root(p)
    p.add_argument("--out", help="write a normalized copy here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="per-category statistics table")
    _add_root(p)
    p.add_argument("--csv", help="write the CSV rendering here")
    p.add_argument("--text", help="write the aligned-text rendering here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="deterministic few-sample subsets")
    _add_root(p)
    p.add_argument("--category", help="category name, or comma list with --counts")
    p.add_argument("--proportion", type=float, default=0.10)
    p.add_argument("--counts", help="comma-separated per-category sample counts")
    p.add_argument("--aggregate", action="store_true", help="also write the 12-category aggregate")
    p.add_argument("--seed", type=int, default=sampling.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="fine-tune on a few-sample subset")
    _add_root(p)
    p.add_argument("--category", default="memc", help="fine-tuning source category")
    p.add_argument("--encoder", help="pretrained encoder name or path")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--proportion", type=float, help="training proportion of the category")
    p.add_argument("--grid", default="default", help="'default' or 'lr,epochs;lr,epochs;...'")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--checkpoints-per-run", dest="checkpoints_per_run", type=int)
    p.add_argument("--fp16", action="store_true")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="continue training from a checkpoint")
    _add_root(p)
    p.add_argument("--from", dest="source", required=True, help="source checkpoint file")
    p.add_argument("--counts", default="64", help="samples per category (comma list)")
    p.add_argument("--aggregate", action="store_true")
    p.add_argument("--encoder", help=argparse.SUPPRESS)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--grid", default="default", help="'default' or 'lr,epochs;lr,epochs;...'")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("structshot", help="nearest-neighbor tagging with CRF decoding")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--support", required=True, help="support sentences (CoNLL)")
    p.add_argument("--test", required=True, help="test sentences (CoNLL)")
    p.add_argument("--transitions-from", help="corpus for transition estimation (CoNLL)")
    p.add_argument("--no-crf", action="store_true", help="plain nearest neighbor, no Viterbi")
    p.add_argument("--whitespace", action="store_true")
    p.add_argument("--out", help="write predictions here")
    p.set_defaults(func=cmd_structshot)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--span-level", action="store_true")
    p.add_argument("--whitespace", action="store_true")
    p.add_argument("--out", help="write the CSV report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the FT / FT+SS / FT+TL / FT+TL+SS comparison")
    _add_root(p)
    p.add_argument("--encoder")
    p.add_argument("--config")
    p.add_argument("--settings", help="comma list, e.g. 'FT,FT+TL' (default: all four)")
    p.add_argument("--proportion", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--grid", default="default", help="'default' or 'lr,epochs;lr,epochs;...'")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("sweep-ft", help="fine-tuning size sweep")
    _add_root(p)
    p.add_argument("--proportions", default="0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.10")
    p.add_argument("--encoder")
    p.add_argument("--config")
    p.add_argument("--grid", default="default", help="'default' or 'lr,epochs;lr,epochs;...'")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--force", action="store_true", help="rerun completed cells")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_ft)

    p = sub.add_parser("sweep-tl", help="transfer-learning size sweep")
    _add_root(p)
    p.add_argument("--counts", default="32,64,128,256")
    p.add_argument("--mode", choices=("aggregate", "individual"), default="aggregate")
    p.add_argument("--from", dest="source", required=True, help="source checkpoint file")
    p.add_argument("--encoder")
    p.add_argument("--config")
    p.add_argument("--grid", default="default", help="'default' or 'lr,epochs;lr,epochs;...'")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_tl)

    p = sub.add_parser("probe", help="adversarial support-set probe")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--pool", required=True, help="support pool, added one sentence at a time")
    p.add_argument("--test", required=True)
    p.add_argument("--transitions-from")
    p.add_argument("--threshold", type=float, default=harness.PROBE_DROP_THRESHOLD)
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--whitespace", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("export-emb", help="export gold-tagged token embeddings")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help="sentences to embed (CoNLL)")
    p.add_argument("--format", choices=("text", "binary"), default="text")
    p.add_argument("--whitespace", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_emb)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
