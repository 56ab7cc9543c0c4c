"""COCO instances loading, box conversion and seeded evaluation subsets."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compositor import ImageBuffer
from .errors import (
    DanglingReferenceError,
    DimensionMismatchError,
    InvalidBoxError,
    ManifestError,
    MissingFileError,
    SamplingError,
    SchemaError,
)
from .geometry import BBox

log = logging.getLogger(__name__)

__all__ = [
    "ImageInfo",
    "Annotation",
    "DatasetIndex",
    "EvalSubset",
    "SIZE_BUCKETS",
    "size_bucket",
    "load_annotations",
    "coco_to_corners",
    "corners_to_coco",
    "sample_subset",
    "write_manifest",
    "read_manifest",
    "resolve_image",
]

# COCO's object size buckets, by annotation area in px^2
SMALL_MAX = 32**2
LARGE_MIN = 96**2
SIZE_BUCKETS = ("small", "medium", "large")


def size_bucket(area: float) -> str:
    if area < SMALL_MAX:
        return "small"
    if area > LARGE_MIN:
        return "large"
    return "medium"


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class Annotation:
    annotation_id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]  # COCO x, y, w, h
    area: float

    @property
    def corners(self) -> BBox:
        return coco_to_corners(*self.bbox)


@dataclass
class DatasetIndex:
    images: dict[int, ImageInfo]
    annotations: dict[int, Annotation]
    categories: dict[int, str]
    source_hash: str = ""
    dropped: int = 0
    _by_image: dict[int, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._by_image:
            for ann in sorted(self.annotations.values(), key=lambda a: a.annotation_id):
                self._by_image.setdefault(ann.image_id, []).append(ann.annotation_id)

    def annotations_for(self, image_id: int) -> list[Annotation]:
        return [self.annotations[a] for a in self._by_image.get(image_id, [])]

    def annotated_image_ids(self) -> list[int]:
        return sorted(self._by_image)

    def category_name(self, category_id: int) -> str:
        return self.categories.get(category_id, f"category {category_id}")


def coco_to_corners(x, y, w, h) -> BBox:
    if not (w > 0 and h > 0):
        raise InvalidBoxError(f"COCO box needs positive width and height, got w={w} h={h}")
    return BBox(x, y, x + w, y + h)


def corners_to_coco(box: BBox) -> tuple[float, float, float, float]:
    return (box.x1, box.y1, box.x2 - box.x1, box.y2 - box.y1)


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_annotations(path) -> DatasetIndex:
    """Load a COCO instances JSON file into a cross-referenced index.

    Boxes with non-positive width or height are dropped and counted in
    ``DatasetIndex.dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"annotation file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise SchemaError(f"{path}: missing list {key!r}")

    try:
        images = {}
        for im in data["images"]:
            info = ImageInfo(int(im["id"]), str(im["file_name"]), int(im["width"]), int(im["height"]))
            images[info.image_id] = info
        categories = {int(c["id"]): str(c["name"]) for c in data["categories"]}
        annotations = {}
        dropped = 0
        for a in data["annotations"]:
            bbox = a["bbox"]
            if len(bbox) != 4:
                raise SchemaError(f"annotation {a.get('id')}: bbox must have 4 numbers")
            x, y, w, h = (float(v) for v in bbox)
            image_id = int(a["image_id"])
            if image_id not in images:
                raise DanglingReferenceError(f"annotation {a['id']} references unknown image_id {image_id}")
            if not (w > 0 and h > 0):
                dropped += 1
                continue
            ann = Annotation(
                int(a["id"]), image_id, int(a["category_id"]), (x, y, w, h), float(a.get("area", w * h))
            )
            annotations[ann.annotation_id] = ann
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed record ({exc!r})") from exc

    if dropped:
        log.warning("dropped %d annotation(s) with non-positive width or height", dropped)
    return DatasetIndex(images, annotations, categories, _file_sha256(path), dropped)


@dataclass(frozen=True)
class EvalSubset:
    seed: int
    image_ids: tuple[int, ...]
    entries: tuple[tuple[int, int], ...]  # (image_id, annotation_id)
    source_hash: str = ""

    @property
    def object_counts(self) -> dict[int, int]:
        counts = dict.fromkeys(self.image_ids, 0)
        for image_id, _ in self.entries:
            counts[image_id] += 1
        return counts

    @property
    def mean_objects_per_image(self) -> float:
        return len(self.entries) / len(self.image_ids) if self.image_ids else 0.0

    def digest(self) -> str:
        return hashlib.sha256(_manifest_text(self).encode()).hexdigest()


def _image_bucket(index: DatasetIndex, image_id: int) -> str:
    # an image is filed under the bucket of its median object area
    areas = sorted(a.area for a in index.annotations_for(image_id))
    return size_bucket(areas[len(areas) // 2])


def _allocate(n: int, sizes: dict[str, int]) -> dict[str, int]:
    """Largest-remainder split of ``n`` proportional to ``sizes``, capped by
    each bucket's size."""
    total = sum(sizes.values())
    quotas = {k: n * v / total for k, v in sizes.items()}
    alloc = {k: min(int(q), sizes[k]) for k, q in quotas.items()}
    order = sorted(sizes, key=lambda k: (-(quotas[k] - int(quotas[k])), SIZE_BUCKETS.index(k)))
    while sum(alloc.values()) < n:
        progressed = False
        for k in order:
            if sum(alloc.values()) >= n:
                break
            if alloc[k] < sizes[k]:
                alloc[k] += 1
                progressed = True
        if not progressed:  # pragma: no cover - guarded by the n <= total check
            break
    return alloc


def sample_subset(index: DatasetIndex, n: int, seed: int = 0) -> EvalSubset:
    """Draw ``n`` annotated images, stratified by COCO size bucket.

    Each image is bucketed by its median object area; bucket quotas follow
    bucket prevalence and images are drawn uniformly inside each bucket.
    Every annotation of a drawn image becomes one evaluation entry.
    """
    candidates = index.annotated_image_ids()
    if n < 1:
        raise SamplingError(f"sample size must be positive, got {n}")
    if n > len(candidates):
        raise SamplingError(f"requested {n} images but only {len(candidates)} have annotations")
    buckets: dict[str, list[int]] = {b: [] for b in SIZE_BUCKETS}
    for image_id in candidates:
        buckets[_image_bucket(index, image_id)].append(image_id)
    sizes = {b: len(ids) for b, ids in buckets.items() if ids}
    alloc = _allocate(n, sizes)

    rng = np.random.default_rng(seed)
    chosen = []
    for b in SIZE_BUCKETS:
        if alloc.get(b):
            pool = np.asarray(buckets[b], dtype=np.int64)
            chosen.extend(int(i) for i in rng.choice(pool, size=alloc[b], replace=False))
    chosen.sort()
    entries = tuple((i, a.annotation_id) for i in chosen for a in index.annotations_for(i))
    return EvalSubset(seed, tuple(chosen), entries, index.source_hash)


def _manifest_text(subset: EvalSubset) -> str:
    header = {
        "kind": "gridloc-subset",
        "seed": subset.seed,
        "source_sha256": subset.source_hash,
        "n_images": len(subset.image_ids),
        "n_entries": len(subset.entries),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps({"annotation_id": a, "image_id": i}, sort_keys=True) for i, a in subset.entries)
    return "\n".join(lines) + "\n"


def write_manifest(subset: EvalSubset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_manifest_text(subset), encoding="utf-8")
    return path


def read_manifest(path, index: DatasetIndex | None = None) -> EvalSubset:
    """Read a subset manifest; with ``index`` given, also check the source
    hash and that every entry resolves."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        header = lines[0]
        if header.get("kind") != "gridloc-subset":
            raise ManifestError(f"{path}: not a subset manifest")
        entries = tuple((int(r["image_id"]), int(r["annotation_id"])) for r in lines[1:])
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc!r})") from exc
    image_ids = tuple(sorted({i for i, _ in entries}))
    if len(image_ids) != header.get("n_images"):
        raise ManifestError(f"{path}: header says {header.get('n_images')} images, found {len(image_ids)}")
    subset = EvalSubset(int(header["seed"]), image_ids, entries, str(header.get("source_sha256", "")))
    if index is not None:
        if subset.source_hash and index.source_hash and subset.source_hash != index.source_hash:
            raise ManifestError(f"{path}: manifest was drawn from a different annotation file")
        for image_id, ann_id in entries:
            ann = index.annotations.get(ann_id)
            if ann is None or ann.image_id != image_id:
                raise ManifestError(f"{path}: entry ({image_id}, {ann_id}) does not resolve")
    return subset


def resolve_image(index: DatasetIndex, image_id: int, image_root) -> ImageBuffer:
    info = index.images.get(image_id)
    if info is None:
        raise DanglingReferenceError(f"unknown image_id {image_id}")
    path = Path(image_root) / info.file_name
    img = ImageBuffer.open(path)
    if (img.width, img.height) != (info.width, info.height):
        raise DimensionMismatchError(
            f"{path}: decoded {img.width}x{img.height}, index says {info.width}x{info.height}"
        )
    return img
