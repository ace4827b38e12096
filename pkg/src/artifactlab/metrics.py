"""Multi-label classification metrics and IOU-based detection scoring."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DomainError
from .instructions import BoundingBox
from .taxonomy import NO_ARTIFACTS, LabelSet, Taxonomy

# Stand-in id used when "No artifacts" takes part in set arithmetic.
NO_ARTIFACTS_ID = -1


def label_ids(labels: LabelSet) -> frozenset[int]:
    return frozenset({NO_ARTIFACTS_ID}) if labels.is_clean else labels.ids


def _check(preds: Sequence, golds: Sequence):
    if len(preds) != len(golds):
        raise DomainError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise DomainError("metrics need at least one example")


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def exact_match_accuracy(preds: Sequence[LabelSet], golds: Sequence[LabelSet]) -> float:
    _check(preds, golds)
    return sum(label_ids(p) == label_ids(g) for p, g in zip(preds, golds)) / len(preds)


def example_prf(pred: frozenset, gold: frozenset) -> tuple[float, float, float]:
    hit = len(pred & gold)
    if pred:
        p = hit / len(pred)
    else:
        p = 1.0 if not gold else 0.0
    if gold:
        r = hit / len(gold)
    else:
        r = 1.0 if not pred else 0.0
    return p, r, _f1(p, r)


def example_based_prf(preds: Sequence[LabelSet], golds: Sequence[LabelSet]) -> tuple[float, float, float]:
    """Mean of per-example precision, recall and F1."""
    _check(preds, golds)
    rows = [example_prf(label_ids(p), label_ids(g)) for p, g in zip(preds, golds)]
    n = len(rows)
    return (sum(r[0] for r in rows) / n, sum(r[1] for r in rows) / n, sum(r[2] for r in rows) / n)


def micro_prf(preds: Sequence[LabelSet], golds: Sequence[LabelSet]) -> tuple[float, float, float]:
    """Pooled true/false positive counts over all labels, "No artifacts" included."""
    _check(preds, golds)
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        p, g = label_ids(p), label_ids(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return prec, rec, _f1(prec, rec)


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False


def per_category_metrics(preds, golds, category, taxonomy: Taxonomy | None = None) -> BinaryMetrics:
    """One-vs-rest metrics for a category id, or for ``NO_ARTIFACTS``.

    Undefined precision (nothing predicted positive) or recall (no gold
    positives) is reported as 0 and flagged.
    """
    _check(preds, golds)
    if category is NO_ARTIFACTS or category == NO_ARTIFACTS_ID:
        key = NO_ARTIFACTS_ID
    elif isinstance(category, int) and not isinstance(category, bool) and category >= 0:
        if taxonomy is not None:
            taxonomy[category]
        key = category
    else:
        raise DomainError(f"invalid category {category!r}")
    tp = fp = fn = tn = 0
    for p, g in zip(preds, golds):
        in_p, in_g = key in label_ids(p), key in label_ids(g)
        if in_p and in_g:
            tp += 1
        elif in_p:
            fp += 1
        elif in_g:
            fn += 1
        else:
            tn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return BinaryMetrics(
        accuracy=(tp + tn) / len(preds),
        precision=prec,
        recall=rec,
        f1=_f1(prec, rec),
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


@dataclass
class ClassificationReport:
    exact_match_accuracy: float
    precision: float
    recall: float
    f1: float
    n_examples: int
    averaging: str = "example"
    per_category: dict = field(default_factory=dict)

    def rows(self, taxonomy: Taxonomy):
        """(name, accuracy, precision, recall, f1) with None for undefined cells."""
        yield ("All", self.exact_match_accuracy, self.precision, self.recall, self.f1)
        for key, m in self.per_category.items():
            name = "No artifacts" if key == NO_ARTIFACTS_ID else taxonomy[key].name
            undefined = m.precision_undefined or m.recall_undefined
            yield (name, m.accuracy, None if m.precision_undefined else m.precision,
                   None if m.recall_undefined else m.recall, None if undefined else m.f1)

    def to_csv(self, taxonomy: Taxonomy) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Categories", "Accuracy", "Precision", "Recall", "F1 Score"])
        for name, *vals in self.rows(taxonomy):
            w.writerow([name, *("-" if v is None else f"{v:.6f}" for v in vals)])
        return buf.getvalue()


def classification_report(preds, golds, taxonomy: Taxonomy, averaging: str = "example") -> ClassificationReport:
    """Table-style report: an "All" row plus one row per category and "No artifacts"."""
    if averaging == "example":
        p, r, f = example_based_prf(preds, golds)
    elif averaging == "micro":
        p, r, f = micro_prf(preds, golds)
    else:
        raise DomainError(f"unknown averaging {averaging!r}")
    per = {c.id: per_category_metrics(preds, golds, c.id) for c in taxonomy.categories}
    per[NO_ARTIFACTS_ID] = per_category_metrics(preds, golds, NO_ARTIFACTS)
    return ClassificationReport(exact_match_accuracy(preds, golds), p, r, f, len(preds), averaging, per)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a.area <= 0 or b.area <= 0:
        raise DomainError("degenerate box")
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


@dataclass
class DetectionResult:
    score: float
    # (gt index, pred index or None, category id, iou)
    pairs: list[tuple[int, int | None, int, float]]


def detection_score(pred: Sequence[tuple[int, BoundingBox]], gt: Sequence[tuple[int, BoundingBox]]) -> DetectionResult:
    """Greedy one-to-one matching of same-category boxes by descending IOU.

    Each ground-truth box scores the IOU of the prediction it is matched to,
    or 0 if none is left; the score is the mean over ground-truth boxes.
    """
    if not gt:
        return DetectionResult(1.0 if not pred else 0.0, [])
    candidates = []
    for gi, (gc, gbox) in enumerate(gt):
        for pi, (pc, pbox) in enumerate(pred):
            if gc == pc:
                v = iou(gbox, pbox)
                if v > 0:
                    candidates.append((-v, gi, pi))
    candidates.sort()
    matched_g, matched_p, best = set(), set(), {}
    for neg, gi, pi in candidates:
        if gi in matched_g or pi in matched_p:
            continue
        matched_g.add(gi)
        matched_p.add(pi)
        best[gi] = (pi, -neg)
    pairs = [(gi, *best.get(gi, (None, 0.0))) for gi in range(len(gt))]
    pairs = [(gi, pi, gt[gi][0], v) for gi, pi, v in pairs]
    return DetectionResult(sum(p[3] for p in pairs) / len(gt), pairs)
