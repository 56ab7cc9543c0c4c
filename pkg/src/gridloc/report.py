"""Box rendering, comparison panels, improvement statistics and report text.

Rendering works on integer pixel rectangles: a continuous box is rounded
half up per corner and covers columns ``[x1, x2)`` and rows ``[y1, y2)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .compositor import ImageBuffer, parse_color
from .errors import UndefinedChangeError
from .geometry import AggregateSummary, BBox

if TYPE_CHECKING:
    from .sweep import SweepReport

__all__ = [
    "AnnotationStyle",
    "ImprovementStat",
    "TABLE1_REFERENCE",
    "render_annotated",
    "side_by_side",
    "relative_change",
    "improvement",
    "report_csv",
    "report_table",
]

NEUTRAL_GRAY = (128, 128, 128)
CSV_COLUMNS = ("config", "size", "color", "alpha", "mean_iou", "mean_giou", "n_scored", "n_failed")

# Published (IoU, GIoU) per configuration label; 30×30 - white - 1.0 was never reported.
TABLE1_REFERENCE = {
    "Original images+CoT": (0.27, 0.18),
    "3×3 - black - 0.1": (0.33, 0.24), "5×5 - black - 0.1": (0.46, 0.41),
    "7×7 - black - 0.1": (0.49, 0.45), "9×9 - black - 0.1": (0.53, 0.49),
    "20×20 - black - 0.1": (0.45, 0.40), "30×30 - black - 0.1": (0.36, 0.30),
    "3×3 - black - 0.3": (0.43, 0.38), "5×5 - black - 0.3": (0.51, 0.47),
    "7×7 - black - 0.3": (0.54, 0.51), "9×9 - black - 0.3": (0.56, 0.53),
    "20×20 - black - 0.3": (0.45, 0.41), "30×30 - black - 0.3": (0.37, 0.32),
    "3×3 - black - 0.5": (0.38, 0.29), "5×5 - black - 0.5": (0.43, 0.38),
    "7×7 - black - 0.5": (0.45, 0.40), "9×9 - black - 0.5": (0.48, 0.43),
    "20×20 - black - 0.5": (0.40, 0.31), "30×30 - black - 0.5": (0.36, 0.30),
    "3×3 - black - 0.7": (0.39, 0.31), "5×5 - black - 0.7": (0.46, 0.38),
    "7×7 - black - 0.7": (0.50, 0.42), "9×9 - black - 0.7": (0.53, 0.49),
    "20×20 - black - 0.7": (0.43, 0.39), "30×30 - black - 0.7": (0.41, 0.37),
    "3×3 - black - 1.0": (0.38, 0.32), "5×5 - black - 1.0": (0.42, 0.39),
    "7×7 - black - 1.0": (0.47, 0.43), "9×9 - black - 1.0": (0.55, 0.49),
    "20×20 - black - 1.0": (0.43, 0.39), "30×30 - black - 1.0": (0.39, 0.32),
    "3×3 - white - 0.1": (0.35, 0.28), "5×5 - white - 0.1": (0.37, 0.31),
    "7×7 - white - 0.1": (0.43, 0.35), "9×9 - white - 0.1": (0.48, 0.41),
    "20×20 - white - 0.1": (0.42, 0.37), "30×30 - white - 0.1": (0.45, 0.39),
    "3×3 - white - 0.3": (0.37, 0.28), "5×5 - white - 0.3": (0.35, 0.29),
    "7×7 - white - 0.3": (0.42, 0.38), "9×9 - white - 0.3": (0.49, 0.42),
    "20×20 - white - 0.3": (0.38, 0.33), "30×30 - white - 0.3": (0.35, 0.29),
    "3×3 - white - 0.5": (0.33, 0.29), "5×5 - white - 0.5": (0.43, 0.37),
    "7×7 - white - 0.5": (0.49, 0.45), "9×9 - white - 0.5": (0.51, 0.47),
    "20×20 - white - 0.5": (0.43, 0.38), "30×30 - white - 0.5": (0.47, 0.45),
    "3×3 - white - 0.7": (0.37, 0.33), "5×5 - white - 0.7": (0.42, 0.37),
    "7×7 - white - 0.7": (0.51, 0.45), "9×9 - white - 0.7": (0.48, 0.43),
    "20×20 - white - 0.7": (0.43, 0.35), "30×30 - white - 0.7": (0.35, 0.32),
    "3×3 - white - 1.0": (0.33, 0.29), "5×5 - white - 1.0": (0.43, 0.39),
    "7×7 - white - 1.0": (0.52, 0.46), "9×9 - white - 1.0": (0.47, 0.42),
    "20×20 - white - 1.0": (0.45, 0.37),
}


@dataclass(frozen=True)
class AnnotationStyle:
    gt_color: tuple[int, int, int] = (0, 200, 0)
    pred_color: tuple[int, int, int] = (230, 0, 0)
    stroke: int = 2
    badge_size: int = 12

    def __post_init__(self):
        object.__setattr__(self, "gt_color", parse_color(self.gt_color))
        object.__setattr__(self, "pred_color", parse_color(self.pred_color))
        if self.gt_color == self.pred_color:
            raise ValueError("ground-truth and prediction colors must differ")
        if self.stroke < 1:
            raise ValueError("stroke must be >= 1 px")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _pixel_rect(box: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    x1 = min(max(_round_half_up(box.x1), 0), width - 1)
    y1 = min(max(_round_half_up(box.y1), 0), height - 1)
    x2 = min(max(_round_half_up(box.x2), x1 + 1), width)
    y2 = min(max(_round_half_up(box.y2), y1 + 1), height)
    return x1, y1, x2, y2


def _stroke_rect(px: np.ndarray, box: BBox, color, stroke: int) -> None:
    h, w = px.shape[:2]
    x1, y1, x2, y2 = _pixel_rect(box, w, h)
    s = stroke
    px[y1 : min(y1 + s, y2), x1:x2] = color
    px[max(y2 - s, y1) : y2, x1:x2] = color
    px[y1:y2, x1 : min(x1 + s, x2)] = color
    px[y1:y2, max(x2 - s, x1) : x2] = color


def _draw_badge(px: np.ndarray, color, size: int) -> None:
    """Failure badge: a filled square in the top-right corner with a
    diagonal cross knocked out in white."""
    h, w = px.shape[:2]
    size = min(size, w, h)
    x0 = w - size
    px[0:size, x0:w] = color
    for i in range(size):
        px[i, x0 + i] = (255, 255, 255)
        px[i, w - 1 - i] = (255, 255, 255)


def render_annotated(image: ImageBuffer, gt: BBox, pred: BBox | None,
                     style: AnnotationStyle = AnnotationStyle()) -> ImageBuffer:
    """GT rectangle first, prediction on top; a missing prediction gets a badge."""
    px = np.array(image.pixels)
    _stroke_rect(px, gt, style.gt_color, style.stroke)
    if pred is None:
        _draw_badge(px, style.pred_color, style.badge_size)
    else:
        _stroke_rect(px, pred, style.pred_color, style.stroke)
    return ImageBuffer(px)


def side_by_side(left: ImageBuffer, right: ImageBuffer, gutter: int = 8,
                 fill=NEUTRAL_GRAY) -> ImageBuffer:
    """Place two images next to each other, bottom-padding the shorter one."""
    if gutter < 0:
        raise ValueError("gutter must be >= 0")
    h = max(left.height, right.height)
    canvas = np.empty((h, left.width + gutter + right.width, 3), dtype=np.uint8)
    canvas[...] = parse_color(fill)
    canvas[: left.height, : left.width] = left.pixels
    canvas[: right.height, left.width + gutter :] = right.pixels
    return ImageBuffer(canvas)


class ImprovementStat(NamedTuple):
    baseline: float
    treated: float
    change_pct: float


def relative_change(baseline: float | None, treated: float) -> ImprovementStat:
    if baseline is None or treated is None or baseline == 0 or not math.isfinite(baseline):
        raise UndefinedChangeError(f"relative change undefined for baseline {baseline!r}")
    return ImprovementStat(baseline, treated, (treated - baseline) / baseline * 100.0)


def improvement(baseline: AggregateSummary, treated: AggregateSummary) -> tuple[ImprovementStat, ImprovementStat]:
    """(IoU change, GIoU change) of ``treated`` relative to ``baseline``."""
    return (
        relative_change(baseline.mean_iou, treated.mean_iou),
        relative_change(baseline.mean_giou, treated.mean_giou),
    )


def _csv_num(v: float | None) -> str:
    return "NA" if v is None else repr(float(v))


def report_csv(report: "SweepReport") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        g = row.config.grid
        s = row.summary
        writer.writerow([
            row.config.label,
            "" if g is None else g.cells,
            "" if g is None else g.color_name,
            "" if g is None else repr(g.alpha),
            _csv_num(s.mean_iou),
            _csv_num(s.mean_giou),
            s.n_scored,
            s.n_failed,
        ])
    return buf.getvalue()


def _fmt2(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def report_table(report: "SweepReport") -> str:
    """Aligned text table in the published row-label format, with the
    reference values alongside and an improvement footer."""
    header = ("Configuration", "IoU", "GIoU", "scored", "failed", "ref IoU", "ref GIoU")
    body = []
    for row in report.rows:
        s = row.summary
        ref = TABLE1_REFERENCE.get(row.config.label)
        body.append((
            row.config.label,
            _fmt2(s.mean_iou),
            _fmt2(s.mean_giou),
            str(s.n_scored),
            str(s.n_failed),
            _fmt2(ref[0]) if ref else "-",
            _fmt2(ref[1]) if ref else "-",
        ))
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = (c.rjust(w) for c, w in zip(cells[1:], widths[1:]))
        return "  ".join([first, *rest]).rstrip()

    rule = "-" * len(line(header))
    lines = [line(header), rule, *(line(r) for r in body), rule]
    policy = report.metadata.get("failure_policy", "lenient")
    lines.append(f"failure policy: {policy}")

    base = report.baseline
    grid_rows = [r for r in report.rows if not r.config.is_baseline and r.summary.defined]
    if base is not None and grid_rows:
        best = max(grid_rows, key=lambda r: r.summary.mean_iou)
        try:
            d_iou, d_giou = improvement(base.summary, best.summary)
        except UndefinedChangeError:
            lines.append(f"best grid configuration: {best.config.label} (baseline undefined or zero)")
        else:
            lines.append(
                f"best grid configuration: {best.config.label}  "
                f"IoU {d_iou.change_pct:+.1f}% ({_fmt2(d_iou.baseline)} -> {_fmt2(d_iou.treated)})  "
                f"GIoU {d_giou.change_pct:+.1f}% ({_fmt2(d_giou.baseline)} -> {_fmt2(d_giou.treated)})"
            )
    if any(r.config.label == "30×30 - white - 1.0" for r in report.rows):
        lines.append("note: 30×30 - white - 1.0 has no published reference value")
    return "\n".join(lines) + "\n"
