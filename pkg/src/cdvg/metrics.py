"""Grounding metrics: IoU, Pr@t, meanIoU, cumIoU, per-domain reports, direction probe.

Boxes are continuous half-open rectangles; area is (x1 - x0) * (y1 - y0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    pred: tuple[float, float, float, float]
    gt: tuple[float, float, float, float]
    domain: str = "optical"
    has_direction: bool = True


def _area(b) -> float:
    return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])


def intersection_union(a, b) -> tuple[float, float]:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    return inter, _area(a) + _area(b) - inter


def iou(a, b) -> float:
    inter, union = intersection_union(a, b)
    return inter / union if union > 0 else 0.0


def _require(records: Sequence[EvalRecord]) -> None:
    if len(records) == 0:
        raise ContractViolation("metrics need at least one record")


def pr_at(records: Sequence[EvalRecord], t: float) -> float:
    """Percentage of records with IoU >= t (inclusive)."""
    _require(records)
    hits = sum(1 for r in records if iou(r.pred, r.gt) >= t)
    return 100.0 * hits / len(records)


def mean_iou(records: Sequence[EvalRecord]) -> float:
    _require(records)
    return 100.0 * float(np.mean([iou(r.pred, r.gt) for r in records]))


def cum_iou(records: Sequence[EvalRecord]) -> float:
    _require(records)
    inter = union = 0.0
    for r in records:
        i, u = intersection_union(r.pred, r.gt)
        inter += i
        union += u
    if union == 0:
        raise ContractViolation("cumulative union area is zero")
    return 100.0 * inter / union


@dataclass
class MetricsReport:
    pr: dict[float, float]
    mean_iou: float
    cum_iou: float
    n: int
    domains: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {f"pr{int(round(t * 100))}": v for t, v in self.pr.items()}
        out.update(mean_iou=self.mean_iou, cum_iou=self.cum_iou, n=self.n)
        for name, sub in sorted(self.domains.items()):
            out[name] = sub.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))


def _summary(records: Sequence[EvalRecord]) -> MetricsReport:
    return MetricsReport(
        pr={t: pr_at(records, t) for t in THRESHOLDS},
        mean_iou=mean_iou(records),
        cum_iou=cum_iou(records),
        n=len(records),
    )


def metrics_report(records: Sequence[EvalRecord]) -> MetricsReport:
    """Full report with a nested sub-report per domain."""
    report = _summary(records)
    for domain in sorted({r.domain for r in records}):
        report.domains[domain] = _summary([r for r in records if r.domain == domain])
    return report


@dataclass(frozen=True)
class ProbeItem:
    """Two same-category objects at mirrored positions; the caption names ``target``."""

    image: np.ndarray
    caption: str
    target: tuple[float, float, float, float]
    distractor: tuple[float, float, float, float]
    domain: str = "optical"


def direction_probe(predict: Callable[[np.ndarray, str], Sequence[float]], items: Iterable[ProbeItem]) -> float:
    """Percentage of items whose predicted box overlaps the named object more than its mirror."""
    hits = total = 0
    for item in items:
        box = predict(item.image, item.caption)
        total += 1
        hits += iou(box, item.target) > iou(box, item.distractor)
    if total == 0:
        raise ContractViolation("direction probe needs at least one item")
    return 100.0 * hits / total
