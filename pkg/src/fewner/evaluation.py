"""Entity metrics and comparison tables.

The default metric is token-level per-tag precision/recall/F1, which is what
the reported tables compare against; span-level exact match is available for
diagnostics. Reports always carry support counts so the support-weighted F1
used for checkpoint selection can be recomputed from a stored report alone.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .corpus import ENTITY_TAGS, Tag, spans_of_tags


@dataclass(frozen=True)
class TagMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    # False when no positive predictions existed (TP+FP == 0) and precision
    # was pinned to 0 by convention rather than computed.
    precision_defined: bool = True


@dataclass(frozen=True)
class EvalReport:
    sn: TagMetrics
    sv: TagMetrics
    n_tokens: int
    level: str = "token"  # "token" | "span"

    def metrics_for(self, tag: Tag) -> TagMetrics:
        if tag is Tag.SN:
            return self.sn
        if tag is Tag.SV:
            return self.sv
        raise ValueError(f"no metrics tracked for tag {tag}")


def _metrics_from_counts(tp: int, fp: int, fn: int, support: int) -> TagMetrics:
    defined = (tp + fp) > 0
    precision = tp / (tp + fp) if defined else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return TagMetrics(precision, recall, f1, support, tp, fp, fn, precision_defined=defined)


def _check_shapes(gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} sequences, pred has {len(pred)}")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(
                f"sequence {i}: gold length {len(g)} != pred length {len(p)}"
            )


def token_prf(
    gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]
) -> EvalReport:
    """Token-level per-tag precision/recall/F1 over {SN, SV}."""
    _check_shapes(gold, pred)
    counts = {t: [0, 0, 0] for t in ENTITY_TAGS}  # tp, fp, fn
    n_tokens = 0
    for g_seq, p_seq in zip(gold, pred):
        for g, p in zip(g_seq, p_seq):
            n_tokens += 1
            for t in ENTITY_TAGS:
                if p is t and g is t:
                    counts[t][0] += 1
                elif p is t:
                    counts[t][1] += 1
                elif g is t:
                    counts[t][2] += 1
    per_tag = {}
    for t in ENTITY_TAGS:
        tp, fp, fn = counts[t]
        per_tag[t] = _metrics_from_counts(tp, fp, fn, support=tp + fn)
    return EvalReport(sn=per_tag[Tag.SN], sv=per_tag[Tag.SV], n_tokens=n_tokens, level="token")


def span_prf(
    gold: Sequence[Sequence[Tag]], pred: Sequence[Sequence[Tag]]
) -> EvalReport:
    """Span-level exact-match (start, end, tag) precision/recall/F1."""
    _check_shapes(gold, pred)
    counts = {t: [0, 0, 0] for t in ENTITY_TAGS}
    n_tokens = 0
    for g_seq, p_seq in zip(gold, pred):
        n_tokens += len(g_seq)
        g_spans = set(spans_of_tags(g_seq))
        p_spans = set(spans_of_tags(p_seq))
        for t in ENTITY_TAGS:
            g_t = {s for s in g_spans if s[2] is t}
            p_t = {s for s in p_spans if s[2] is t}
            counts[t][0] += len(g_t & p_t)
            counts[t][1] += len(p_t - g_t)
            counts[t][2] += len(g_t - p_t)
    per_tag = {}
    for t in ENTITY_TAGS:
        tp, fp, fn = counts[t]
        per_tag[t] = _metrics_from_counts(tp, fp, fn, support=tp + fn)
    return EvalReport(sn=per_tag[Tag.SN], sv=per_tag[Tag.SV], n_tokens=n_tokens, level="span")


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Unweighted arithmetic mean of each metric (macro over categories).

    Supports and raw counts are summed for reference, not averaged.
    """
    if not reports:
        raise ValueError("cannot average an empty list of reports")

    def mean_tag(metrics: list[TagMetrics]) -> TagMetrics:
        n = len(metrics)
        return TagMetrics(
            precision=sum(m.precision for m in metrics) / n,
            recall=sum(m.recall for m in metrics) / n,
            f1=sum(m.f1 for m in metrics) / n,
            support=sum(m.support for m in metrics),
            tp=sum(m.tp for m in metrics),
            fp=sum(m.fp for m in metrics),
            fn=sum(m.fn for m in metrics),
            precision_defined=all(m.precision_defined for m in metrics),
        )

    levels = {r.level for r in reports}
    return EvalReport(
        sn=mean_tag([r.sn for r in reports]),
        sv=mean_tag([r.sv for r in reports]),
        n_tokens=sum(r.n_tokens for r in reports),
        level=levels.pop() if len(levels) == 1 else "mixed",
    )


COMPARISON_COLUMNS = (
    "SN precision",
    "SN recall",
    "SN f1-score",
    "SV precision",
    "SV recall",
    "SV f1-score",
)


def _report_cells(report: EvalReport) -> list[float]:
    return [
        report.sn.precision,
        report.sn.recall,
        report.sn.f1,
        report.sv.precision,
        report.sv.recall,
        report.sv.f1,
    ]


def render_comparison_csv(settings: Mapping[str, EvalReport]) -> str:
    """CSV with one row per setting, 4-decimal metrics, fixed column order."""
    if not settings:
        raise ValueError("need at least one setting to render")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("setting",) + COMPARISON_COLUMNS)
    for name, report in settings.items():
        writer.writerow([name] + [f"{v:.4f}" for v in _report_cells(report)])
    return buf.getvalue()


def render_comparison_text(settings: Mapping[str, EvalReport]) -> str:
    """Aligned-text rendering of the same table as render_comparison_csv."""
    if not settings:
        raise ValueError("need at least one setting to render")
    name_w = max(len("setting"), max(len(n) for n in settings))
    header = f"{'setting':<{name_w}}  " + "  ".join(f"{c:>12}" for c in COMPARISON_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, report in settings.items():
        cells = "  ".join(f"{v:>12.4f}" for v in _report_cells(report))
        lines.append(f"{name:<{name_w}}  {cells}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> dict:
    """JSON-friendly rendering used by run records and manifests."""
    def tag_dict(m: TagMetrics) -> dict:
        return {
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "support": m.support,
            "tp": m.tp,
            "fp": m.fp,
            "fn": m.fn,
            "precision_defined": m.precision_defined,
        }

    return {
        "level": report.level,
        "n_tokens": report.n_tokens,
        "SN": tag_dict(report.sn),
        "SV": tag_dict(report.sv),
    }


def report_from_dict(data: dict) -> EvalReport:
    def tag_metrics(d: dict) -> TagMetrics:
        return TagMetrics(
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            support=d["support"],
            tp=d.get("tp", 0),
            fp=d.get("fp", 0),
            fn=d.get("fn", 0),
            precision_defined=d.get("precision_defined", True),
        )

    return EvalReport(
        sn=tag_metrics(data["SN"]),
        sv=tag_metrics(data["SV"]),
        n_tokens=data["n_tokens"],
        level=data.get("level", "token"),
    )
