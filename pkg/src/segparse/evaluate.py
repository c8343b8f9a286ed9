"""Exact-match evaluation with per-split and per-depth breakdowns."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .errors import LengthMismatch
from .funql import MrNode, canonical_equal
from .spans import Span


@dataclass
class EvalReport:
    n: int
    exact_match_accuracy: float
    by_split: dict[str, float] = field(default_factory=dict)
    by_depth: dict[str, float] = field(default_factory=dict)
    segmentation_agreement: Optional[float] = None
    traces_path: Optional[str] = None

    def to_json(self) -> dict:
        return asdict(self)


def _ratio(correct: int, total: int) -> float:
    return correct / total if total else 0.0


def span_agreement(predicted: Sequence[Sequence[Span]], gold: Sequence[Sequence[Span]]) -> float:
    """Fraction of segmentation steps where the predicted span equals the gold one.

    Steps are aligned by position; a step present on one side only counts as a
    disagreement.
    """
    hit = total = 0
    for p, g in zip(predicted, gold):
        total += max(len(p), len(g))
        hit += sum(a == b for a, b in zip(p, g))
    return _ratio(hit, total)


def evaluate(predictions: Sequence[Optional[MrNode]], gold: Sequence, labels: Optional[Sequence] = None,
             predicted_spans: Optional[Sequence[Sequence[Span]]] = None,
             traces_path: Optional[str] = None) -> EvalReport:
    """Score predictions against gold instances; ``None`` predictions count as wrong."""
    if len(predictions) != len(gold):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(gold)} gold instances")
    if labels is None:
        labels = [getattr(g, "label", None) for g in gold]
    elif len(labels) != len(gold):
        raise LengthMismatch(f"{len(labels)} labels for {len(gold)} gold instances")
    hits = [p is not None and canonical_equal(p, g.mr) for p, g in zip(predictions, gold)]

    split_counts = defaultdict(lambda: [0, 0])
    depth_counts = defaultdict(lambda: [0, 0])
    for ok, g, label in zip(hits, gold, labels):
        if label is not None:
            split_counts[str(label)][0] += ok
            split_counts[str(label)][1] += 1
        depth = getattr(g, "depth", None)
        if depth is not None:
            depth_counts[str(depth)][0] += ok
            depth_counts[str(depth)][1] += 1

    agreement = None
    if predicted_spans is not None:
        if len(predicted_spans) != len(gold):
            raise LengthMismatch(f"{len(predicted_spans)} span lists for {len(gold)} gold instances")
        pairs = [(p, [s for s, _ in g.gold_spans]) for p, g in zip(predicted_spans, gold)
                 if getattr(g, "gold_spans", None) is not None]
        if pairs:
            agreement = span_agreement([p for p, _ in pairs], [g for _, g in pairs])

    return EvalReport(
        n=len(gold),
        exact_match_accuracy=_ratio(sum(hits), len(gold)),
        by_split={k: _ratio(*v) for k, v in sorted(split_counts.items())},
        by_depth={k: _ratio(*v) for k, v in sorted(depth_counts.items(), key=lambda kv: int(kv[0]))},
        segmentation_agreement=agreement,
        traces_path=traces_path,
    )
