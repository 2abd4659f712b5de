"""Classification reports, invalid-node identification metrics, length buckets.

Pure functions over aligned prediction/gold sequences. A prediction of None
marks an unparsable model output and counts as wrong for every class without
creating a phantom class of its own.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .errors import ShapeError

DEFAULT_BUCKETS = ((None, 5), (6, 15), (16, None))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
        }


@dataclass
class MetricsReport:
    accuracy: float
    per_class: dict[Hashable, ClassMetrics]
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    support: int
    node_id: "NodeIdMetrics | None" = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "per_class": {str(k): v.to_dict() for k, v in self.per_class.items()},
            "macro_avg": dict(zip(("precision", "recall", "f1"), self.macro_avg)),
            "weighted_avg": dict(zip(("precision", "recall", "f1"), self.weighted_avg)),
            "support": self.support,
        }
        if self.node_id is not None:
            out["node_id"] = self.node_id.to_dict()
        return out


@dataclass(frozen=True)
class NodeIdMetrics:
    precision: float
    recall: float
    f1: float
    jaccard_mean: float

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "jaccard_mean": self.jaccard_mean,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def classification_report(preds: Sequence, golds: Sequence) -> MetricsReport:
    """Confusion-matrix-derived accuracy, per-class P/R/F1, macro and weighted averages.

    Classes are the union of gold and (non-None) predicted labels, ordered by
    string form. Supports sum to the sample count by construction.
    """
    if len(preds) != len(golds):
        raise ShapeError(f"preds ({len(preds)}) and golds ({len(golds)}) differ in length")
    if not golds:
        raise ShapeError("need at least one sample")
    classes = sorted(set(golds) | {p for p in preds if p is not None}, key=str)
    support = Counter(golds)
    tp = Counter()
    pred_count = Counter()
    for p, g in zip(preds, golds):
        if p is not None:
            pred_count[p] += 1
        if p == g:
            tp[g] += 1

    per_class: dict[Hashable, ClassMetrics] = {}
    for c in classes:
        precision = _safe_div(tp[c], pred_count[c])
        recall = _safe_div(tp[c], support[c])
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class[c] = ClassMetrics(precision, recall, f1, support[c])

    n = len(golds)
    macro = tuple(
        sum(getattr(m, field) for m in per_class.values()) / len(classes)
        for field in ("precision", "recall", "f1")
    )
    weighted = tuple(
        sum(getattr(m, field) * m.support for m in per_class.values()) / n
        for field in ("precision", "recall", "f1")
    )
    return MetricsReport(
        accuracy=sum(tp.values()) / n,
        per_class=per_class,
        macro_avg=macro,
        weighted_avg=weighted,
        support=n,
    )


def jaccard(a: Iterable, b: Iterable) -> float:
    """|a & b| / |a | b|, with empty-vs-empty defined as 1.0 (a correct
    "no invalid nodes" call is perfect)."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def invalid_node_metrics(
    pred_sets: Sequence[Iterable],
    gold_sets: Sequence[Iterable],
    average: str = "macro",
) -> NodeIdMetrics:
    """Set precision/recall/F1 plus mean Jaccard over per-chain breakpoint sets.

    "macro" (default) averages per-chain scores, empty-vs-empty counting as a
    perfect chain; "micro" pools node counts over all chains.
    """
    if len(pred_sets) != len(gold_sets):
        raise ShapeError(
            f"pred_sets ({len(pred_sets)}) and gold_sets ({len(gold_sets)}) differ in length"
        )
    if not gold_sets:
        raise ShapeError("need at least one chain")
    if average not in ("macro", "micro"):
        raise ValueError(f"average must be 'macro' or 'micro', got {average!r}")

    pairs = [(set(p), set(g)) for p, g in zip(pred_sets, gold_sets)]
    jac = sum(jaccard(p, g) for p, g in pairs) / len(pairs)

    if average == "macro":
        precisions, recalls, f1s = [], [], []
        for p, g in pairs:
            if not p and not g:
                precisions.append(1.0)
                recalls.append(1.0)
                f1s.append(1.0)
                continue
            inter = len(p & g)
            precision = _safe_div(inter, len(p))
            recall = _safe_div(inter, len(g))
            precisions.append(precision)
            recalls.append(recall)
            f1s.append(_safe_div(2 * precision * recall, precision + recall))
        return NodeIdMetrics(
            precision=sum(precisions) / len(pairs),
            recall=sum(recalls) / len(pairs),
            f1=sum(f1s) / len(pairs),
            jaccard_mean=jac,
        )

    inter = sum(len(p & g) for p, g in pairs)
    total_pred = sum(len(p) for p, _ in pairs)
    total_gold = sum(len(g) for _, g in pairs)
    if total_pred == 0 and total_gold == 0:
        return NodeIdMetrics(1.0, 1.0, 1.0, jac)
    precision = _safe_div(inter, total_pred)
    recall = _safe_div(inter, total_gold)
    return NodeIdMetrics(
        precision=precision,
        recall=recall,
        f1=_safe_div(2 * precision * recall, precision + recall),
        jaccard_mean=jac,
    )


def _bucket_name(lo: int | None, hi: int | None) -> str:
    if lo is None:
        return f"<={hi}"
    if hi is None:
        return f">={lo}"
    return f"{lo}-{hi}"


@dataclass
class LengthBucketReport:
    bucket: str
    support: int
    report: MetricsReport | None  # None when the bucket is empty

    def to_dict(self) -> dict:
        return {
            "bucket": self.bucket,
            "support": self.support,
            "report": self.report.to_dict() if self.report else None,
        }


def length_bucket_report(
    preds: Sequence,
    golds: Sequence,
    chain_lengths: Sequence[int],
    buckets: Sequence[tuple[int | None, int | None]] = DEFAULT_BUCKETS,
) -> list[LengthBucketReport]:
    """classification_report restricted to chain-length buckets.

    Buckets partition by inclusive bounds; per-bucket supports sum to the
    total support.
    """
    if not (len(preds) == len(golds) == len(chain_lengths)):
        raise ShapeError("preds, golds and chain_lengths must be aligned")
    out = []
    for lo, hi in buckets:
        idx = [
            i
            for i, length in enumerate(chain_lengths)
            if (lo is None or length >= lo) and (hi is None or length <= hi)
        ]
        name = _bucket_name(lo, hi)
        if not idx:
            out.append(LengthBucketReport(bucket=name, support=0, report=None))
            continue
        report = classification_report([preds[i] for i in idx], [golds[i] for i in idx])
        out.append(LengthBucketReport(bucket=name, support=len(idx), report=report))
    return out


def format_report_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    """Aligned text table: one row per (name, report) with weighted averages."""
    header = ("Task", "Accuracy", "Precision", "Recall", "F1-score", "Support")
    lines = []
    for name, report in rows:
        p, r, f1 = report.weighted_avg
        lines.append(
            (name, f"{report.accuracy * 100:.2f}%", f"{p:.2f}", f"{r:.2f}", f"{f1:.2f}",
             str(report.support))
        )
    widths = [max(len(h), *(len(row[i]) for row in lines)) if lines else len(h)
              for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    out.extend(fmt.format(*row) for row in lines)
    return "\n".join(out)


def format_node_id_table(rows: Sequence[tuple[str, NodeIdMetrics]]) -> str:
    header = ("Task", "Precision", "Recall", "F1-score", "Jaccard Sim.")
    lines = [
        (name, f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.2f}", f"{m.jaccard_mean:.2f}")
        for name, m in rows
    ]
    widths = [max(len(h), *(len(row[i]) for row in lines)) if lines else len(h)
              for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    out.extend(fmt.format(*row) for row in lines)
    return "\n".join(out)
