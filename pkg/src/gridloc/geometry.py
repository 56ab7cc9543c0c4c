"""Axis-aligned boxes, IoU / GIoU and per-configuration aggregation.

Areas use the continuous convention ``(x2 - x1) * (y2 - y1)``. All arithmetic
is double precision; rounding happens only when reports are rendered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidBoxError

__all__ = [
    "BBox",
    "format_coords",
    "MetricPair",
    "AggregateSummary",
    "STRICT_FAILURE",
    "area",
    "intersection_area",
    "union_area",
    "enclosing_box",
    "iou",
    "giou",
    "metrics",
    "batch_metrics",
    "aggregate",
]


@dataclass(frozen=True)
class BBox:
    """Corner-convention box; construction rejects non-finite, degenerate
    and inverted coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.x1, self.y1, self.x2, self.y2))
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box coordinates {vals}")
        if not (vals[0] < vals[2] and vals[1] < vals[3]):
            raise InvalidBoxError(f"box must satisfy x1 < x2 and y1 < y2, got {vals}")
        for name, v in zip(("x1", "y1", "x2", "y2"), vals):
            object.__setattr__(self, name, v)

    def __iter__(self):
        return iter((self.x1, self.y1, self.x2, self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def format(self) -> str:
        return format_coords(self)


def format_coords(values) -> str:
    """``[x1, y1, x2, y2]`` text; integral values drop the ``.0``, others
    keep full repr precision so parsing recovers them exactly."""
    parts = (str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v)) for v in values)
    return "[" + ", ".join(parts) + "]"


class MetricPair(NamedTuple):
    iou: float
    giou: float


# score assigned to an unparseable prediction under the strict failure policy
STRICT_FAILURE = MetricPair(0.0, -1.0)


def area(b: BBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return iw * ih


def union_area(a: BBox, b: BBox) -> float:
    return area(a) + area(b) - intersection_area(a, b)


def enclosing_box(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    return inter / (area(a) + area(b) - inter)


def giou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    hull = area(enclosing_box(a, b))
    return inter / union - (hull - union) / hull


def metrics(a: BBox, b: BBox) -> MetricPair:
    return MetricPair(iou(a, b), giou(a, b))


def batch_metrics(a, b) -> np.ndarray:
    """Row-wise (iou, giou) for two (N, 4) arrays of corner boxes."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return kernels.box_metrics(a, b)


@dataclass(frozen=True)
class AggregateSummary:
    """Means over scored trials. ``mean_iou``/``mean_giou`` are None when
    nothing was averaged, never a silent zero."""

    mean_iou: float | None
    mean_giou: float | None
    n_scored: int
    n_failed: int
    policy: str = "lenient"

    @property
    def defined(self) -> bool:
        return self.mean_iou is not None

    @property
    def total(self) -> int:
        return self.n_scored + self.n_failed


def aggregate(results: Iterable[MetricPair | None], policy: str = "lenient") -> AggregateSummary:
    """Average per-trial metrics; ``None`` entries are failed trials.

    lenient: failures are excluded from the means.
    strict: failures contribute ``STRICT_FAILURE`` (iou 0, giou -1).
    ``math.fsum`` keeps the means independent of trial order.
    """
    if policy not in ("lenient", "strict"):
        raise ValueError(f"unknown failure policy {policy!r}")
    scored = []
    n_failed = 0
    for r in results:
        if r is None:
            n_failed += 1
            if policy == "strict":
                scored.append(STRICT_FAILURE)
        else:
            scored.append(r)
    n_scored = len(scored) - (n_failed if policy == "strict" else 0)
    if not scored:
        return AggregateSummary(None, None, 0, n_failed, policy)
    n = len(scored)
    return AggregateSummary(
        math.fsum(m[0] for m in scored) / n,
        math.fsum(m[1] for m in scored) / n,
        n_scored,
        n_failed,
        policy,
    )
