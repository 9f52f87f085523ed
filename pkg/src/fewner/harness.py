"""Config-driven experiment runner for the four-setting matrix, size sweeps,
and the adversarial support-set probe.

Cells are resumable: each writes a completion marker and is skipped on rerun
unless forced. All randomness flows from one base seed recorded in the
manifest; restart i trains with seed = base + i while the data-preparation
seed stays fixed.
"""

from __future__ import annotations

import csv
import io
import json
import platform
import statistics
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from . import evaluation, sampling, structshot, tagger
from .corpus import TRANSFER_CATEGORIES, Corpus, TaggedSentence
from .evaluation import EvalReport, average_reports, report_from_dict, report_to_dict, token_prf
from .sampling import SamplingSpec
from .structshot import embedding_records, write_embeddings_binary, write_embeddings_text
from .tagger import Checkpoint, EncoderHandle, TaggerModel, TrainingConfig, weighted_f1

SETTINGS = ("FT", "FT+SS", "FT+TL", "FT+TL+SS")

# Reporting default for flagging suspicious probe steps; not a tuned value.
PROBE_DROP_THRESHOLD = 0.20


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment family."""

    encoder: str
    settings: tuple[str, ...] = SETTINGS
    ft_proportion: float = 0.10
    tl_count: int = 64
    grid: tuple[tuple[float, int], ...] = tagger.DEFAULT_GRID
    restarts: int = 10
    base_seed: int = 42
    data_seed: int = sampling.DEFAULT_SEED
    batch_size: int = 2
    checkpoints_per_run: int = 5
    precision: str = "full"
    out_dir: str | None = None

    def __post_init__(self) -> None:
        for s in self.settings:
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {s!r}; expected one of {SETTINGS}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def training_config(self, lr: float, epochs: int, seed: int) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=lr,
            epochs=epochs,
            batch_size=self.batch_size,
            seed=seed,
            precision=self.precision,
            checkpoints_per_run=self.checkpoints_per_run,
        )

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "settings": list(self.settings),
            "ft_proportion": self.ft_proportion,
            "tl_count": self.tl_count,
            "grid": [list(cell) for cell in self.grid],
            "restarts": self.restarts,
            "base_seed": self.base_seed,
            "data_seed": self.data_seed,
            "batch_size": self.batch_size,
            "checkpoints_per_run": self.checkpoints_per_run,
            "precision": self.precision,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kwargs = dict(data)
        if "settings" in kwargs:
            kwargs["settings"] = tuple(kwargs["settings"])
        if "grid" in kwargs:
            kwargs["grid"] = tuple((float(lr), int(ep)) for lr, ep in kwargs["grid"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RunRecord:
    """One experiment cell: per-restart reports plus their mean and spread."""

    label: str
    config: dict
    reports: list[EvalReport]
    wall_clock: float
    environment: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.reports:
            raise ValueError("a run record needs at least one restart report")

    @property
    def mean_report(self) -> EvalReport:
        return average_reports(self.reports)

    def metric_summary(self) -> dict:
        """Mean and standard deviation per metric across restarts."""
        summary = {}
        for name, getter in _METRIC_GETTERS.items():
            values = [getter(r) for r in self.reports]
            summary[name] = {
                "mean": statistics.fmean(values),
                "std": statistics.pstdev(values) if len(values) > 1 else 0.0,
            }
        return summary

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "reports": [report_to_dict(r) for r in self.reports],
            "wall_clock": self.wall_clock,
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(
            label=data["label"],
            config=data["config"],
            reports=[report_from_dict(r) for r in data["reports"]],
            wall_clock=data["wall_clock"],
            environment=data.get("environment", {}),
        )


_METRIC_GETTERS = {
    "sn_precision": lambda r: r.sn.precision,
    "sn_recall": lambda r: r.sn.recall,
    "sn_f1": lambda r: r.sn.f1,
    "sv_precision": lambda r: r.sv.precision,
    "sv_recall": lambda r: r.sv.recall,
    "sv_f1": lambda r: r.sv.f1,
    "weighted_f1": lambda r: weighted_f1(r),
}


def environment_fingerprint() -> dict:
    import torch
    import transformers

    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "torch": torch.__version__,
        "transformers": transformers.__version__,
    }


# ---------------------------------------------------------------------------
# Completion markers


def _marker_path(out_dir: Path, cell_id: str) -> Path:
    return out_dir / "cells" / f"{cell_id}.done"


def _load_completed(out_dir: Path | None, cell_id: str) -> RunRecord | None:
    if out_dir is None:
        return None
    marker = _marker_path(out_dir, cell_id)
    if not marker.is_file():
        return None
    return RunRecord.from_dict(json.loads(marker.read_text(encoding="utf-8")))


def _mark_completed(out_dir: Path | None, cell_id: str, record: RunRecord) -> None:
    if out_dir is None:
        return
    marker = _marker_path(out_dir, cell_id)
    marker.parent.mkdir(parents=True, exist_ok=True)
    marker.write_text(json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Stage primitives


def finetune_stage(
    corpus: Corpus,
    config: ExperimentConfig,
    proportion: float | None = None,
    seed: int | None = None,
    grid: Sequence[tuple[float, int]] | None = None,
    category: str = "memc",
) -> tuple[Checkpoint, dict]:
    """Sample the fine-tuning subset, grid-search, return the winning checkpoint.

    Validation follows the labeling-budget rule: sampled from the train
    remainder at min(|subset|, 10% of full train), not the official valid
    split. The official valid stays reserved for full-data baselines.
    """
    full_train = corpus.get(category, "train")
    p = proportion if proportion is not None else config.ft_proportion
    spec = SamplingSpec(mode="proportion", value=p, seed=config.data_seed)
    split = sampling.make_fewsample_split(full_train, spec, source=(category, "train"))
    valid = split.valid
    encoder = EncoderHandle(config.encoder)
    base = config.training_config(1e-5, 3, seed if seed is not None else config.base_seed)
    cells: list[dict] = []
    cfg, best = tagger.grid_search(
        encoder,
        split.train,
        valid,
        space=grid if grid is not None else config.grid,
        base=base,
        on_cell=cells.append,
    )
    info = {
        "category": category,
        "proportion": p,
        "train_size": len(split.train),
        "valid_size": len(valid),
        "grid_cells": cells,
        "winning_config": cfg.manifest(),
        "provenance": split.provenance,
    }
    return best, info


def run_finetune_restarts(
    corpus: Corpus,
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    category: str = "memc",
) -> tuple[Checkpoint, dict]:
    """Grid search once, then restart the winning cell config.restarts times.

    Restart i reseeds initialization and data order with base_seed + i while
    the sampled data stays fixed. When out_dir is given, each restart's
    checkpoints land in out_dir/checkpoints/restart-<i>/step-*.pt and
    metrics.csv records one row per (restart, checkpoint). Returns the
    restart-0 best checkpoint (the canonical artifact for transfer) plus a
    summary dict.
    """
    from dataclasses import replace

    full_train = corpus.get(category, "train")
    spec = SamplingSpec(mode="proportion", value=config.ft_proportion, seed=config.data_seed)
    split = sampling.make_fewsample_split(full_train, spec, source=(category, "train"))
    encoder = EncoderHandle(config.encoder)
    cells: list[dict] = []
    win_cfg, _ = tagger.grid_search(
        encoder,
        split.train,
        split.valid,
        space=config.grid,
        base=config.training_config(1e-5, 3, config.base_seed),
        on_cell=cells.append,
    )

    out = Path(out_dir) if out_dir else None
    restart_bests: list[Checkpoint] = []
    metrics_rows: list[dict] = []
    test_reports: list[EvalReport] = []
    has_test = corpus.has(category, "test")
    for i in range(config.restarts):
        cfg_i = replace(win_cfg, seed=config.base_seed + i)
        save_dir = out / "checkpoints" / f"restart-{i}" if out else None
        best_i, all_i = tagger.fine_tune(
            encoder, split.train, split.valid, cfg_i, save_dir=save_dir
        )
        restart_bests.append(best_i)
        for ckpt in all_i:
            metrics_rows.append(
                {
                    "restart": i,
                    "step": ckpt.step,
                    "sn_precision": ckpt.report.sn.precision,
                    "sn_recall": ckpt.report.sn.recall,
                    "sn_f1": ckpt.report.sn.f1,
                    "sv_precision": ckpt.report.sv.precision,
                    "sv_recall": ckpt.report.sv.recall,
                    "sv_f1": ckpt.report.sv.f1,
                    "weighted_f1": ckpt.weighted_f1,
                    "train_loss": ckpt.train_loss,
                }
            )
        if has_test:
            model = tagger.restore_model(best_i)
            test_reports.append(evaluate_model_on_category(model, corpus, category))

    record = RunRecord(
        label=f"ft-{category}",
        config=config.to_dict(),
        reports=test_reports or [b.report for b in restart_bests],
        wall_clock=0.0,
        environment=environment_fingerprint(),
    )
    info = {
        "category": category,
        "train_size": len(split.train),
        "valid_size": len(split.valid),
        "grid_cells": cells,
        "winning_config": win_cfg.manifest(),
        "provenance": split.provenance,
        "restart_seeds": [config.base_seed + i for i in range(config.restarts)],
        "restart_valid_weighted_f1": [b.weighted_f1 for b in restart_bests],
        "test_summary": record.metric_summary(),
        "test_reports": [report_to_dict(r) for r in record.reports],
    }
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(metrics_rows), encoding="utf-8")
    return restart_bests[0], info


METRICS_COLUMNS = (
    "restart", "step", "sn_precision", "sn_recall", "sn_f1",
    "sv_precision", "sv_recall", "sv_f1", "weighted_f1", "train_loss",
)


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        out_row = []
        for col in METRICS_COLUMNS:
            value = row[col]
            if isinstance(value, float):
                out_row.append(f"{value:.6f}")
            elif value is None:
                out_row.append("")
            else:
                out_row.append(value)
        writer.writerow(out_row)
    return buf.getvalue()


def evaluate_model_on_category(
    model: TaggerModel, corpus: Corpus, category: str
) -> EvalReport:
    test = corpus.get(category, "test")
    pred = tagger.predict(model, test)
    return token_prf([s.tags for s in test], pred)


# ---------------------------------------------------------------------------
# Sweeps


def run_finetune_sweep(
    corpus: Corpus,
    proportions: Sequence[float],
    config: ExperimentConfig,
    train_fn: Callable | None = None,
    force: bool = False,
) -> list[RunRecord]:
    """One RunRecord per proportion; restarts vary only the training seed.

    ``train_fn(corpus, config, proportion, seed) -> EvalReport`` is injectable
    for orchestration tests; the default runs the real fine-tune stage and
    evaluates the winner on the memc test split.
    """
    out_dir = Path(config.out_dir) if config.out_dir else None
    env = environment_fingerprint()
    records = []
    for p in proportions:
        cell_id = f"ft-p{p:g}"
        done = None if force else _load_completed(out_dir, cell_id)
        if done is not None:
            records.append(done)
            continue
        t0 = time.perf_counter()
        reports = []
        for restart in range(config.restarts):
            seed = config.base_seed + restart
            if train_fn is not None:
                reports.append(train_fn(corpus, config, p, seed))
            else:
                best, _ = finetune_stage(corpus, config, proportion=p, seed=seed)
                model = tagger.restore_model(best)
                reports.append(evaluate_model_on_category(model, corpus, "memc"))
        record = RunRecord(
            label=cell_id,
            config={**config.to_dict(), "proportion": p},
            reports=reports,
            wall_clock=time.perf_counter() - t0,
            environment=env,
        )
        _mark_completed(out_dir, cell_id, record)
        records.append(record)
    if out_dir is not None:
        (out_dir / "ft_sweep.csv").write_text(sweep_csv(records), encoding="utf-8")
    return records


def run_transfer_sweep(
    corpus: Corpus,
    counts: Sequence[int],
    mode: str,
    config: ExperimentConfig,
    source_checkpoint: Checkpoint | None = None,
    transfer_fn: Callable | None = None,
    force: bool = False,
) -> list[RunRecord]:
    """Transfer-learning size sweep over samples-per-category counts.

    ``aggregate`` mode trains once on the pooled 12-category subset and
    evaluates each category independently; ``individual`` mode runs 12
    separate transfers. Each record's reports are the 12 per-category reports
    of restart 0 when restarts == 1, otherwise the per-restart category
    averages.
    """
    if mode not in ("aggregate", "individual"):
        raise ValueError(f"mode must be 'aggregate' or 'individual', got {mode!r}")
    out_dir = Path(config.out_dir) if config.out_dir else None
    env = environment_fingerprint()
    records = []
    for k in counts:
        cell_id = f"tl-{mode}-k{k}"
        done = None if force else _load_completed(out_dir, cell_id)
        if done is not None:
            records.append(done)
            continue
        t0 = time.perf_counter()
        reports = []
        per_category_detail = []
        for restart in range(config.restarts):
            seed = config.base_seed + restart
            if transfer_fn is not None:
                reports.append(transfer_fn(corpus, config, k, mode, seed))
            else:
                if source_checkpoint is None:
                    raise ValueError("transfer sweep needs a source checkpoint")
                per_category = _run_transfer_once(
                    corpus, config, source_checkpoint, k, mode, seed
                )
                per_category_detail.append(
                    {cat: report_to_dict(r) for cat, r in per_category.items()}
                )
                reports.append(average_reports(list(per_category.values())))
        record = RunRecord(
            label=cell_id,
            config={
                **config.to_dict(),
                "count": k,
                "mode": mode,
                "per_category": per_category_detail,
            },
            reports=reports,
            wall_clock=time.perf_counter() - t0,
            environment=env,
        )
        _mark_completed(out_dir, cell_id, record)
        records.append(record)
    if out_dir is not None:
        (out_dir / f"tl_sweep_{mode}.csv").write_text(sweep_csv(records), encoding="utf-8")
    return records


def _category_fewsample(
    corpus: Corpus, category: str, k: int, seed: int
) -> tuple[list[TaggedSentence], list[TaggedSentence]]:
    """Few-sample train/valid for one transfer category."""
    full_train = corpus.get(category, "train")
    spec = SamplingSpec(mode="count", value=k, seed=seed)
    split = sampling.make_fewsample_split(full_train, spec, source=(category, "train"))
    return split.train, split.valid


def _run_transfer_once(
    corpus: Corpus,
    config: ExperimentConfig,
    source: Checkpoint,
    k: int,
    mode: str,
    seed: int,
) -> dict[str, EvalReport]:
    lr, epochs = sorted(config.grid)[0]
    categories = [
        c for c in TRANSFER_CATEGORIES if corpus.has(c, "train") and corpus.has(c, "test")
    ]
    if not categories:
        raise ValueError("no transfer categories with both train and test splits")
    out: dict[str, EvalReport] = {}
    if mode == "aggregate":
        subsets, valids = {}, []
        for cat in categories:
            train, valid = _category_fewsample(corpus, cat, k, config.data_seed)
            subsets[cat] = train
            valids.extend(valid)
        train = sampling.build_aggregate(subsets)
        best, _ = tagger.transfer(
            source, train, valids, config.training_config(lr, epochs, seed)
        )
        model = tagger.restore_model(best)
        for cat in categories:
            out[cat] = evaluate_model_on_category(model, corpus, cat)
    else:
        for cat in categories:
            train, valid = _category_fewsample(corpus, cat, k, config.data_seed)
            best, _ = tagger.transfer(
                source, train, valid, config.training_config(lr, epochs, seed)
            )
            model = tagger.restore_model(best)
            out[cat] = evaluate_model_on_category(model, corpus, cat)
    return out


def sweep_csv(records: Sequence[RunRecord]) -> str:
    """Per-restart rows plus one summary row per record, in input order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["label", "restart", "sn_precision", "sn_recall", "sn_f1",
         "sv_precision", "sv_recall", "sv_f1", "weighted_f1"]
    )
    for record in records:
        for i, report in enumerate(record.reports):
            writer.writerow(
                [record.label, i]
                + [f"{g(report):.4f}" for g in _METRIC_GETTERS.values()]
            )
        summary = record.metric_summary()
        writer.writerow(
            [record.label, "mean"]
            + [f"{summary[m]['mean']:.4f}" for m in _METRIC_GETTERS]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# The four-setting matrix


@dataclass
class MatrixStages:
    """Injectable stage executors; the defaults run the real pipeline.

    Each callable returns the 12-category average EvalReport for its setting.
    finetune() is invoked exactly once and its result shared by every setting
    that needs the fine-tuned checkpoint.
    """

    finetune: Callable[[], Checkpoint]
    evaluate_ft: Callable[[Checkpoint], EvalReport]
    evaluate_ft_ss: Callable[[Checkpoint], EvalReport]
    evaluate_ft_tl: Callable[[Checkpoint], EvalReport]
    evaluate_ft_tl_ss: Callable[[Checkpoint], EvalReport]


def default_matrix_stages(corpus: Corpus, config: ExperimentConfig) -> MatrixStages:
    categories = [
        c for c in TRANSFER_CATEGORIES if corpus.has(c, "train") and corpus.has(c, "test")
    ]
    if not categories:
        raise ValueError("no transfer categories with both train and test splits")
    memc_train = corpus.get("memc", "train")
    spec = SamplingSpec(mode="proportion", value=config.ft_proportion, seed=config.data_seed)

    def transition_tags():
        split = sampling.make_fewsample_split(memc_train, spec, source=("memc", "train"))
        return [s.tags for s in split.train]

    def finetune() -> Checkpoint:
        best, _ = finetune_stage(corpus, config)
        return best

    def eval_model(model: TaggerModel) -> EvalReport:
        return average_reports(
            [evaluate_model_on_category(model, corpus, cat) for cat in categories]
        )

    def eval_structshot(model: TaggerModel) -> EvalReport:
        reports = []
        trans = transition_tags()
        for cat in categories:
            support, _ = _category_fewsample(corpus, cat, config.tl_count, config.data_seed)
            test = corpus.get(cat, "test")
            pred = structshot.structshot_tag(model, support, test, transition_corpus=trans)
            reports.append(token_prf([s.tags for s in test], pred))
        return average_reports(reports)

    def do_transfer(ckpt: Checkpoint) -> Checkpoint:
        lr, epochs = sorted(config.grid)[0]
        subsets, valids = {}, []
        for cat in categories:
            train, valid = _category_fewsample(corpus, cat, config.tl_count, config.data_seed)
            subsets[cat] = train
            valids.extend(valid)
        best, _ = tagger.transfer(
            ckpt,
            sampling.build_aggregate(subsets),
            valids,
            config.training_config(lr, epochs, config.base_seed),
        )
        return best

    transferred: dict[str, Checkpoint] = {}

    def get_transferred(ckpt: Checkpoint) -> Checkpoint:
        if "ckpt" not in transferred:
            transferred["ckpt"] = do_transfer(ckpt)
        return transferred["ckpt"]

    return MatrixStages(
        finetune=finetune,
        evaluate_ft=lambda ckpt: eval_model(tagger.restore_model(ckpt)),
        evaluate_ft_ss=lambda ckpt: eval_structshot(tagger.restore_model(ckpt)),
        evaluate_ft_tl=lambda ckpt: eval_model(tagger.restore_model(get_transferred(ckpt))),
        evaluate_ft_tl_ss=lambda ckpt: eval_structshot(
            tagger.restore_model(get_transferred(ckpt))
        ),
    )


def run_setting_matrix(
    config: ExperimentConfig,
    stages: MatrixStages,
) -> dict[str, EvalReport]:
    """Execute the configured settings sharing one fine-tuned checkpoint.

    Returns setting -> averaged report in the fixed order FT, FT+SS, FT+TL,
    FT+TL+SS (restricted to the configured settings). Rendering via
    evaluation.render_comparison_* reproduces the reported table layout.
    """
    evaluators = {
        "FT": stages.evaluate_ft,
        "FT+SS": stages.evaluate_ft_ss,
        "FT+TL": stages.evaluate_ft_tl,
        "FT+TL+SS": stages.evaluate_ft_tl_ss,
    }
    ordered = [s for s in SETTINGS if s in config.settings]
    checkpoint = stages.finetune()
    results: dict[str, EvalReport] = {}
    for setting in ordered:
        results[setting] = evaluators[setting](checkpoint)
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.csv").write_text(
            evaluation.render_comparison_csv(results), encoding="utf-8"
        )
        (out / "matrix.txt").write_text(
            evaluation.render_comparison_text(results), encoding="utf-8"
        )
        (out / "matrix.json").write_text(
            json.dumps({k: report_to_dict(v) for k, v in results.items()}, indent=2) + "\n",
            encoding="utf-8",
        )
    return results


# ---------------------------------------------------------------------------
# Adversarial support-set probe


@dataclass(frozen=True)
class ProbeStep:
    support_size: int
    report: EvalReport
    sn_f1_delta: float
    flagged: bool


def run_adversarial_probe(
    model: TaggerModel,
    support_pool: Sequence[TaggedSentence],
    test_sentences: Sequence[TaggedSentence],
    transition_corpus: Sequence[Sequence] | None = None,
    threshold: float = PROBE_DROP_THRESHOLD,
    use_crf: bool = True,
) -> list[ProbeStep]:
    """Grow the support set one pool sentence at a time and track the damage.

    Step k evaluates structshot with the first k pool sentences as support.
    A step is flagged when its SN F1 drops by more than ``threshold``
    relative to the previous step.
    """
    if not support_pool:
        raise ValueError("support pool is empty")
    gold = [s.tags for s in test_sentences]
    steps: list[ProbeStep] = []
    prev_sn_f1: float | None = None
    for k in range(1, len(support_pool) + 1):
        support = list(support_pool[:k])
        pred = structshot.structshot_tag(
            model,
            support,
            test_sentences,
            transition_corpus=transition_corpus,
            use_crf=use_crf,
        )
        report = token_prf(gold, pred)
        delta = 0.0 if prev_sn_f1 is None else report.sn.f1 - prev_sn_f1
        steps.append(
            ProbeStep(
                support_size=k,
                report=report,
                sn_f1_delta=delta,
                flagged=prev_sn_f1 is not None and delta < -threshold,
            )
        )
        prev_sn_f1 = report.sn.f1
    return steps


def probe_csv(steps: Sequence[ProbeStep]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["support_size", "sn_f1", "sv_f1", "sn_f1_delta", "flagged"])
    for step in steps:
        writer.writerow(
            [
                step.support_size,
                f"{step.report.sn.f1:.4f}",
                f"{step.report.sv.f1:.4f}",
                f"{step.sn_f1_delta:+.4f}",
                int(step.flagged),
            ]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Embedding export


def export_embeddings(
    model: TaggerModel,
    sentences: Sequence[TaggedSentence],
    path: str | Path,
    fmt: str = "text",
) -> int:
    """Write gold-tagged token embeddings in the exchange format; returns row count."""
    if fmt not in ("text", "binary"):
        raise ValueError(f"fmt must be 'text' or 'binary', got {fmt!r}")
    embeddings = tagger.extract_token_embeddings(model, sentences)
    records = embedding_records(sentences, embeddings)
    if fmt == "text":
        write_embeddings_text(path, records)
    else:
        write_embeddings_binary(path, records)
    return len(records)
