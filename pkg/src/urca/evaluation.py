"""Metrics: confusion counting, micro scores, coverage, edit distance, and rater agreement."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from urca.embedding import EmbeddingVector, cosine
from urca.labels import UNPARSED, ConclusionLabel, Prediction, label_to_str

if TYPE_CHECKING:
    from urca.pipeline import PredictionRecord

REPORT_FORMATS = ("json", "csv", "markdown")
CSV_HEADER = "variant,model,f1,precision,recall,accuracy,coverage,n,unparsed"


@dataclass
class ConfusionCounts:
    tp: dict[ConclusionLabel, int]
    fp: dict[ConclusionLabel, int]
    fn: dict[ConclusionLabel, int]
    n_unparsed: int
    n_total: int


@dataclass(frozen=True)
class MicroMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float


@dataclass(frozen=True)
class LabelMetrics:
    f1: float
    precision: float
    recall: float


@dataclass(frozen=True)
class MetricsReport:
    micro_f1: float
    micro_precision: float
    micro_recall: float
    accuracy: float
    per_label: dict[ConclusionLabel, LabelMetrics]
    mean_coverage: float
    n_records: int
    n_unparsed: int


@dataclass(frozen=True)
class AgreementStats:
    """Annotation-round agreement: change rate, edit distance, kappa, and semantic similarity."""

    proportion_changed: float
    mean_levenshtein: float
    fleiss_kappa: float
    mean_pairwise_cosine: float


def confusion(pairs: Sequence[tuple[Prediction, ConclusionLabel]]) -> ConfusionCounts:
    """Count one-vs-rest confusion over (predicted, gold) pairs.

    A correct prediction is a true positive for its label. A wrong label is
    a false positive for the predicted label and a false negative for the
    gold one. An unparsed prediction names no label, so it only costs a
    false negative on the gold label.
    """
    tp = {label: 0 for label in ConclusionLabel}
    fp = {label: 0 for label in ConclusionLabel}
    fn = {label: 0 for label in ConclusionLabel}
    n_unparsed = 0
    for predicted, gold in pairs:
        if not isinstance(gold, ConclusionLabel):
            raise ValueError(f"gold labels must be conclusion labels, got {gold!r}")
        if predicted is UNPARSED:
            fn[gold] += 1
            n_unparsed += 1
        elif predicted == gold:
            tp[gold] += 1
        else:
            fp[predicted] += 1
            fn[gold] += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, n_unparsed=n_unparsed, n_total=len(pairs))


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(precision: float, recall: float) -> float:
    return _safe_div(2.0 * precision * recall, precision + recall)


def micro_metrics(counts: ConfusionCounts) -> MicroMetrics:
    tp = sum(counts.tp.values())
    fp = sum(counts.fp.values())
    fn = sum(counts.fn.values())
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    return MicroMetrics(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        accuracy=_safe_div(tp, counts.n_total),
    )


def per_label_metrics(counts: ConfusionCounts) -> dict[ConclusionLabel, LabelMetrics]:
    out = {}
    for label in ConclusionLabel:
        precision = _safe_div(counts.tp[label], counts.tp[label] + counts.fp[label])
        recall = _safe_div(counts.tp[label], counts.tp[label] + counts.fn[label])
        out[label] = LabelMetrics(f1=_f1(precision, recall), precision=precision, recall=recall)
    return out


def coverage_rate(sources_covered: int, total_sources: int) -> float:
    if total_sources < 1:
        raise ValueError(f"total_sources must be >= 1, got {total_sources}")
    if not 0 <= sources_covered <= total_sources:
        raise ValueError(
            f"sources_covered must be in [0, {total_sources}], got {sources_covered}"
        )
    return sources_covered / total_sources


def proportion_changed(before: Sequence, after: Sequence) -> float:
    """Fraction of positions where the two sequences disagree."""
    if len(before) != len(after):
        raise ValueError(f"length mismatch: {len(before)} vs {len(after)}")
    if not before:
        raise ValueError("sequences must be non-empty")
    changed = sum(1 for b, a in zip(before, after) if b != a)
    return changed / len(before)


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insert, delete, and substitute."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,          # delete from a
                    current[j - 1] + 1,       # insert into a
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def fleiss_kappa(table: Sequence[Sequence[int]]) -> float:
    """Fleiss' kappa over an items x categories table of rating counts.

    Every row must sum to the same number of raters (at least 2). When the
    expected agreement is already perfect (all raters used one category for
    everything), observed agreement is too, and kappa is 1 by convention.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
        raise ValueError(f"table must be 2-d and non-empty, got shape {t.shape}")
    if np.any(t < 0):
        raise ValueError("rating counts must be non-negative")
    row_sums = t.sum(axis=1)
    n_raters = row_sums[0]
    if n_raters < 2:
        raise ValueError(f"need at least 2 raters, got {n_raters}")
    if not np.all(row_sums == n_raters):
        raise ValueError("every item must have the same number of ratings")

    p_observed = ((t * t).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = float(p_observed.mean())
    category_props = t.sum(axis=0) / t.sum()
    p_expected = float((category_props * category_props).sum())
    if p_expected == 1.0:
        return 1.0
    return (p_bar - p_expected) / (1.0 - p_expected)


def pairwise_cosine_agreement(annotations: Sequence[Sequence[EmbeddingVector]]) -> float:
    """Mean over annotator pairs of the mean per-item cosine similarity."""
    m = len(annotations)
    if m < 2:
        raise ValueError(f"need at least 2 annotators, got {m}")
    n_items = len(annotations[0])
    if n_items < 1:
        raise ValueError("annotators must cover at least one item")
    if any(len(a) != n_items for a in annotations):
        raise ValueError("every annotator must cover the same items")

    pair_means = []
    for i in range(m):
        for j in range(i + 1, m):
            sims = [cosine(annotations[i][t], annotations[j][t]) for t in range(n_items)]
            pair_means.append(sum(sims) / n_items)
    return sum(pair_means) / len(pair_means)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def build_report(records: Sequence["PredictionRecord"]) -> MetricsReport:
    """Aggregate one group of prediction records into a MetricsReport."""
    if not records:
        raise ValueError("cannot report on zero records")
    pairs = [(r.predicted, r.gold) for r in records if r.gold is not None]
    counts = confusion(pairs)
    micro = micro_metrics(counts)
    coverages = [coverage_rate(r.sources_covered, r.total_sources) for r in records]
    return MetricsReport(
        micro_f1=micro.f1,
        micro_precision=micro.precision,
        micro_recall=micro.recall,
        accuracy=micro.accuracy,
        per_label=per_label_metrics(counts),
        mean_coverage=sum(coverages) / len(coverages),
        n_records=len(records),
        n_unparsed=sum(1 for r in records if r.predicted is UNPARSED),
    )


def _grouped_rows(records: Sequence["PredictionRecord"]) -> list[tuple[str, str, MetricsReport]]:
    groups: dict[tuple[str, str], list] = {}
    for record in records:
        groups.setdefault((record.variant, record.model_name), []).append(record)
    return [(variant, model, build_report(groups[(variant, model)])) for variant, model in sorted(groups)]


def emit_report(records: Sequence["PredictionRecord"], format: str = "markdown") -> str:
    """Render metrics for a batch of prediction records, one row per (variant, model).

    Output is deterministic for a fixed record list; floats carry 4 decimal
    places in the csv and markdown forms.
    """
    if format not in REPORT_FORMATS:
        raise ValueError(f"format must be one of {REPORT_FORMATS}, got {format!r}")
    if not records:
        raise ValueError("cannot report on zero records")
    rows = _grouped_rows(records)

    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for variant, model, report in rows:
            writer.writerow(
                [
                    variant,
                    model,
                    f"{report.micro_f1:.4f}",
                    f"{report.micro_precision:.4f}",
                    f"{report.micro_recall:.4f}",
                    f"{report.accuracy:.4f}",
                    f"{report.mean_coverage:.4f}",
                    report.n_records,
                    report.n_unparsed,
                ]
            )
        return buffer.getvalue()

    if format == "markdown":
        lines = [
            "| Variant | Model | F1 | Precision | Recall | Accuracy | Coverage | N | Unparsed |",
            "| --- | --- | --- | --- | --- | --- | --- | --- | --- |",
        ]
        for variant, model, report in rows:
            lines.append(
                f"| {variant} | {model} | {report.micro_f1:.4f} | {report.micro_precision:.4f} "
                f"| {report.micro_recall:.4f} | {report.accuracy:.4f} | {report.mean_coverage:.4f} "
                f"| {report.n_records} | {report.n_unparsed} |"
            )
        return "\n".join(lines) + "\n"

    payload = {
        "rows": [
            {
                "variant": variant,
                "model": model,
                "f1": report.micro_f1,
                "precision": report.micro_precision,
                "recall": report.micro_recall,
                "accuracy": report.accuracy,
                "coverage": report.mean_coverage,
                "n": report.n_records,
                "unparsed": report.n_unparsed,
                "per_label": {
                    label_to_str(label): {
                        "f1": metrics.f1,
                        "precision": metrics.precision,
                        "recall": metrics.recall,
                    }
                    for label, metrics in report.per_label.items()
                },
            }
            for variant, model, report in rows
        ]
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
