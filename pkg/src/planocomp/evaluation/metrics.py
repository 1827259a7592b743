"""Detection and compliance precision/recall/F1."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from planocomp.align import AlignmentResult
from planocomp.model import Detection, iou


@dataclass(frozen=True)
class MetricReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: MetricReport) -> MetricReport:
        return MetricReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def total(reports: Iterable[MetricReport]) -> MetricReport:
    return sum(reports, MetricReport())


def _det_key(d: Detection):
    return (-d.weight, d.label, d.box)


def detection_metrics(
    predicted: Sequence[Detection], truth: Sequence[Detection], iou_min: float = 0.5
) -> MetricReport:
    """Greedy one-to-one matching by descending prediction weight.

    A prediction is a true positive when an unmatched ground-truth box of
    the same label overlaps it with IoU >= ``iou_min``; it takes the best
    such box. Inputs are sorted first, so their order does not matter.
    """
    gts = sorted(truth, key=lambda d: (d.label, d.box))
    used = [False] * len(gts)
    tp = 0
    for p in sorted(predicted, key=_det_key):
        best, best_iou = -1, iou_min
        for j, g in enumerate(gts):
            if used[j] or g.label != p.label:
                continue
            v = iou(p.box, g.box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            tp += 1
    return MetricReport(tp, len(predicted) - tp, len(gts) - tp)


def _position_keys(result: AlignmentResult) -> Counter:
    keys: Counter = Counter()
    for r, d, s, k in zip(result.ref_aligned, result.det_aligned, result.statuses, result.ref_index):
        keys[(k, r.label, r.quantity, d.label, d.quantity, s.value)] += 1
    return keys


def compliance_metrics(result: AlignmentResult, truth: AlignmentResult) -> MetricReport:
    """Group-level scores of a produced alignment against the ground-truth alignment.

    A produced position is a true positive when the ground truth has the same
    pairing (reference group, detected label and quantity) with the same
    status. Any other produced position is a false positive; ground-truth
    positions left unmatched are false negatives.
    """
    if not result.statuses or not truth.statuses:
        raise ValueError("both alignments need statuses")
    got, want = _position_keys(result), _position_keys(truth)
    tp = sum((got & want).values())
    return MetricReport(tp, sum(got.values()) - tp, sum(want.values()) - tp)
