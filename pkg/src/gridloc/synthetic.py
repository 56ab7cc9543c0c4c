"""Deterministic COCO-style fixture datasets for offline runs and tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .compositor import ImageBuffer

CATEGORIES = ("person", "dog", "car", "bicycle", "cup")


def make_coco_fixture(root, n_images: int = 10, seed: int = 0, size=(160, 120),
                      max_objects: int = 4, boxes=None) -> Path:
    """Write ``images/*.png`` and ``instances.json`` under ``root``.

    Each image is a noisy background with filled rectangles at its annotated
    boxes. ``boxes`` maps an image index to an explicit list of
    ``(x, y, w, h, category)`` tuples, overriding the random draw for it.
    Returns the annotation file path.
    """
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    width, height = size
    boxes = boxes or {}

    images, annotations = [], []
    ann_id = 1
    for i in range(n_images):
        image_id = 1000 + i
        px = rng.integers(40, 216, size=(height, width, 3), dtype=np.uint8)
        objects = boxes.get(i)
        if objects is None:
            objects = []
            for _ in range(int(rng.integers(1, max_objects + 1))):
                w = int(rng.integers(4, width // 2))
                h = int(rng.integers(4, height // 2))
                x = int(rng.integers(0, width - w))
                y = int(rng.integers(0, height - h))
                objects.append((x, y, w, h, CATEGORIES[int(rng.integers(len(CATEGORIES)))]))
        for x, y, w, h, cat in objects:
            shade = rng.integers(0, 256, size=3, dtype=np.uint8)
            px[int(y) : int(y + h), int(x) : int(x + w)] = shade
            annotations.append({
                "id": ann_id,
                "image_id": image_id,
                "category_id": CATEGORIES.index(cat) + 1,
                "bbox": [x, y, w, h],
                "area": float(w * h),
                "iscrowd": 0,
            })
            ann_id += 1
        name = f"{image_id:012d}.png"
        ImageBuffer(px).save(img_dir / name)
        images.append({"id": image_id, "file_name": name, "width": width, "height": height})

    data = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": k + 1, "name": n} for k, n in enumerate(CATEGORIES)],
    }
    path = root / "instances.json"
    path.write_text(json.dumps(data, indent=1), encoding="utf-8")
    return path
