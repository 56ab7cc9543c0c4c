"""Comparison panels for finished sweeps.

Files land in ``<out>/<config key>/`` as ``{image_id}_{config key}.png``
(grid image with GT and prediction) and ``{image_id}_compare.png`` (baseline
prediction on the original on the left, this configuration on the right).
"""

from __future__ import annotations

from pathlib import Path

from .compositor import composite
from .geometry import BBox
from .report import AnnotationStyle, render_annotated, side_by_side
from .sweep import EvalDataset, EvalRecord, SweepConfig


def _box(values) -> BBox | None:
    return BBox(*values) if values is not None else None


def select_trials(records: list[EvalRecord], k: int) -> list[EvalRecord]:
    """The k best and k worst scored trials by IoU, at most one per image."""
    scored = sorted((r for r in records if r.scored), key=lambda r: (-r.iou, r.entry_index))
    picked, seen = [], set()
    for pool in (scored, scored[::-1]):
        taken = 0
        for r in pool:
            if taken == k:
                break
            if r.image_id in seen:
                continue
            seen.add(r.image_id)
            picked.append(r)
            taken += 1
    return picked


def write_panels(records: list[EvalRecord], dataset: EvalDataset, out_dir, k: int = 2,
                 style: AnnotationStyle = AnnotationStyle()) -> list[Path]:
    out_dir = Path(out_dir)
    baseline = {r.annotation_id: r for r in records if r.config.get("baseline")}
    by_config: dict[int, list[EvalRecord]] = {}
    for r in records:
        if not r.config.get("baseline"):
            by_config.setdefault(r.config_index, []).append(r)

    written = []
    for recs in by_config.values():
        config = SweepConfig.from_dict(recs[0].config)
        target = out_dir / config.key
        for rec in select_trials(recs, k):
            original = dataset.image(rec.image_id)
            gridded = composite(original, config.grid)
            gt = BBox(*rec.gt)
            right = render_annotated(gridded, gt, _box(rec.pred), style)
            written.append(right.save(target / f"{rec.image_id}_{config.key}.png"))
            base = baseline.get(rec.annotation_id)
            if base is not None:
                left = render_annotated(original, gt, _box(base.pred), style)
                written.append(side_by_side(left, right).save(target / f"{rec.image_id}_compare.png"))
    return written
