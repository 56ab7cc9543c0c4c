"""Configuration sweep: composite -> query -> parse -> score for every
(configuration, object) pair, then aggregate one row per configuration.

Scoring is a pure function of the persisted record log, so ``rescore``
reproduces the report of a finished run without touching any backend.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import report as reporting
from .client import DEFAULT_TEMPLATE, Backend, PromptTemplate, QueryRequest, build_prompt
from .compositor import GridConfig, ImageBuffer, composite, parse_color
from .dataset import DatasetIndex, EvalSubset, resolve_image
from .errors import AuthenticationError, BackendError, ConfigurationError, DatasetError
from .geometry import AggregateSummary, BBox, MetricPair, aggregate, metrics
from .parsing import parse_prediction

log = logging.getLogger(__name__)

__all__ = [
    "PAPER_SIZES",
    "PAPER_COLORS",
    "PAPER_ALPHAS",
    "BASELINE_LABEL",
    "SweepConfig",
    "SweepSpec",
    "EvalRecord",
    "ReportRow",
    "SweepReport",
    "EvalDataset",
    "enumerate_configs",
    "run_trial",
    "score_response",
    "run_sweep",
    "summarize",
    "rescore",
    "read_records",
    "write_records",
]

PAPER_SIZES = (3, 5, 7, 9, 20, 30)
PAPER_COLORS = ("black", "white")
PAPER_ALPHAS = (0.1, 0.3, 0.5, 0.7, 1.0)
BASELINE_LABEL = "Original images+CoT"


@dataclass(frozen=True)
class SweepConfig:
    """One row of the sweep; ``grid=None`` is the no-grid baseline."""

    grid: GridConfig | None = None

    @property
    def is_baseline(self) -> bool:
        return self.grid is None

    @property
    def label(self) -> str:
        if self.grid is None:
            return BASELINE_LABEL
        g = self.grid
        return f"{g.cells}×{g.cells} - {g.color_name} - {g.alpha!r}"

    @property
    def key(self) -> str:
        """Filesystem-safe identifier, e.g. ``9x9-black-0.3``."""
        if self.grid is None:
            return "baseline"
        g = self.grid
        color = g.color_name.lstrip("#")
        suffix = f"-w{g.line_width}" if g.line_width != 1 else ""
        return f"{g.cells}x{g.cells}-{color}-{g.alpha!r}{suffix}"

    def to_dict(self) -> dict:
        if self.grid is None:
            return {"baseline": True}
        g = self.grid
        return {"cells": g.cells, "color": list(g.color), "alpha": g.alpha, "line_width": g.line_width}

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if data.get("baseline"):
            return cls(None)
        return cls(GridConfig(data["cells"], tuple(data["color"]), data["alpha"], data.get("line_width", 1)))


@dataclass(frozen=True)
class SweepSpec:
    sizes: tuple[int, ...] = PAPER_SIZES
    colors: tuple = PAPER_COLORS
    alphas: tuple[float, ...] = PAPER_ALPHAS
    include_baseline: bool = True
    line_width: int = 1
    failure_policy: str = "lenient"
    parallelism: int = 4
    extended_grammar: bool = False
    template: PromptTemplate = DEFAULT_TEMPLATE

    def __post_init__(self):
        for name in ("sizes", "colors", "alphas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.failure_policy not in ("lenient", "strict"):
            raise ConfigurationError(f"failure policy must be lenient or strict, got {self.failure_policy!r}")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")


def enumerate_configs(spec: SweepSpec) -> list[SweepConfig]:
    """Baseline first (when enabled), then sizes x colors x alphas in
    size-major, color, alpha order."""
    for name in ("sizes", "colors", "alphas"):
        if not getattr(spec, name):
            raise ConfigurationError(f"sweep axis {name!r} is empty")
    configs = [SweepConfig(None)] if spec.include_baseline else []
    for size in spec.sizes:
        for color in spec.colors:
            for alpha in spec.alphas:
                configs.append(SweepConfig(GridConfig(size, parse_color(color), alpha, spec.line_width)))
    return configs


@dataclass
class EvalRecord:
    config_index: int
    config: dict
    config_label: str
    entry_index: int
    image_id: int
    annotation_id: int
    category: str
    image_size: tuple[int, int]
    prompt: str
    response: str | None
    status: str  # "scored" | "parse-failed" | "backend-error"
    gt: tuple[float, float, float, float]
    pred: tuple[float, float, float, float] | None = None
    iou: float | None = None
    giou: float | None = None
    failure: str | None = None
    fractional: bool = False
    latency: float = 0.0

    @property
    def scored(self) -> bool:
        return self.status == "scored"

    @property
    def metric_pair(self) -> MetricPair | None:
        return MetricPair(self.iou, self.giou) if self.scored else None

    def to_json(self) -> str:
        data = dict(self.__dict__)
        data["image_size"] = list(self.image_size)
        data["gt"] = list(self.gt)
        data["pred"] = list(self.pred) if self.pred is not None else None
        return json.dumps(data, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "EvalRecord":
        data = json.loads(line)
        data["image_size"] = tuple(data["image_size"])
        data["gt"] = tuple(data["gt"])
        if data.get("pred") is not None:
            data["pred"] = tuple(data["pred"])
        return cls(**data)


def score_response(record: EvalRecord, extended: bool = False) -> EvalRecord:
    """Fill parse outcome and metrics of ``record`` from its raw response."""
    if record.response is None:
        record.status = "backend-error"
        record.pred = record.iou = record.giou = None
        return record
    outcome = parse_prediction(record.response, record.image_size, extended=extended)
    record.fractional = outcome.fractional
    if not outcome.ok:
        record.status = "parse-failed"
        record.failure = outcome.reason.value
        record.pred = record.iou = record.giou = None
        return record
    pair = metrics(outcome.box, BBox(*record.gt))
    record.status = "scored"
    record.failure = None
    record.pred = outcome.box.as_tuple()
    record.iou, record.giou = pair
    return record


class EvalDataset:
    """Annotation index + subset + image directory, with a small decode cache."""

    def __init__(self, index: DatasetIndex, subset: EvalSubset, image_root, cache_size: int = 16):
        self.index = index
        self.subset = subset
        self.image_root = Path(image_root)
        self._images: OrderedDict[int, ImageBuffer] = OrderedDict()
        self._lock = threading.Lock()
        self._cache_size = cache_size

    @property
    def entries(self):
        return self.subset.entries

    def image(self, image_id: int) -> ImageBuffer:
        with self._lock:
            if image_id in self._images:
                self._images.move_to_end(image_id)
                return self._images[image_id]
        img = resolve_image(self.index, image_id, self.image_root)
        with self._lock:
            self._images[image_id] = img
            while len(self._images) > self._cache_size:
                self._images.popitem(last=False)
        return img


def run_trial(config: SweepConfig, entry: tuple[int, int], backend: Backend, dataset: EvalDataset, *,
              config_index: int = 0, entry_index: int = 0, image: ImageBuffer | None = None,
              spec: SweepSpec = SweepSpec()) -> EvalRecord:
    """Run one (configuration, object) trial.

    Model and parse failures end up in the record. Dataset problems and
    authentication failures propagate and stop the sweep.
    """
    image_id, ann_id = entry
    ann = dataset.index.annotations[ann_id]
    category = dataset.index.category_name(ann.category_id)
    if image is None:
        image = composite(dataset.image(image_id), config.grid)
    prompt = build_prompt(category, spec.template)
    gt = ann.corners
    record = EvalRecord(
        config_index=config_index,
        config=config.to_dict(),
        config_label=config.label,
        entry_index=entry_index,
        image_id=image_id,
        annotation_id=ann_id,
        category=category,
        image_size=(image.width, image.height),
        prompt=prompt,
        response=None,
        status="backend-error",
        gt=gt.as_tuple(),
    )
    t0 = time.perf_counter()
    try:
        record.response = backend.query(QueryRequest(image, prompt, f"ann:{ann_id}", gt))
    except AuthenticationError:
        raise
    except BackendError as exc:
        record.failure = f"{type(exc).__name__}: {exc}"
        log.warning("backend error on %s / annotation %d: %s", config.label, ann_id, exc)
    record.latency = time.perf_counter() - t0
    return score_response(record, extended=spec.extended_grammar)


@dataclass(frozen=True)
class ReportRow:
    config: SweepConfig
    summary: AggregateSummary


@dataclass
class SweepReport:
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)

    @property
    def baseline(self) -> ReportRow | None:
        return next((r for r in self.rows if r.config.is_baseline), None)

    def row(self, label: str) -> ReportRow:
        for r in self.rows:
            if r.config.label == label or r.config.key == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        return reporting.report_csv(self)

    def to_table(self) -> str:
        return reporting.report_table(self)


def summarize(records: Iterable[EvalRecord], policy: str = "lenient") -> SweepReport:
    """Group records by configuration (in configuration order) and aggregate."""
    groups: dict[int, list[EvalRecord]] = {}
    for rec in records:
        groups.setdefault(rec.config_index, []).append(rec)
    rows = []
    for idx in sorted(groups):
        recs = sorted(groups[idx], key=lambda r: r.entry_index)
        config = SweepConfig.from_dict(recs[0].config)
        rows.append(ReportRow(config, aggregate((r.metric_pair for r in recs), policy)))
    return SweepReport(rows, {"failure_policy": policy})


def rescore(records: Iterable[EvalRecord], policy: str = "lenient", extended: bool = False) -> SweepReport:
    """Re-parse every stored response and rebuild the report; no backend calls."""
    return summarize((score_response(r, extended) for r in records), policy)


def write_records(records: Iterable[EvalRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    tmp.replace(path)
    return path


def read_records(path) -> list[EvalRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EvalRecord.from_json(line) for line in fh if line.strip()]


def _write_outputs(report: SweepReport, records: list[EvalRecord], out_dir: Path) -> None:
    write_records(records, out_dir / "records.jsonl")
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_table(), encoding="utf-8")
    (out_dir / "run.json").write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_sweep(spec: SweepSpec, dataset: EvalDataset, backend: Backend, out_dir=None) -> SweepReport:
    """Execute every configuration over every subset entry.

    Work units are (image, configuration) pairs: the image is composited once
    and each of its objects is queried. Up to ``spec.parallelism`` units run
    at once; records are sorted back into configuration order before
    aggregation, so results do not depend on scheduling. With ``out_dir``
    the record log, CSV/table report and run metadata are written there; if
    the sweep aborts, the records finished so far are flushed first.
    """
    configs = enumerate_configs(spec)
    entries = list(dataset.entries)
    by_image: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for i, entry in enumerate(entries):
        by_image.setdefault(entry[0], []).append((i, entry))
    units = [(image_id, ci) for image_id in by_image for ci in range(len(configs))]

    started = time.time()
    done: list[EvalRecord] = []
    sink_lock = threading.Lock()
    abort = threading.Event()

    def work(unit):
        if abort.is_set():
            return
        image_id, ci = unit
        config = configs[ci]
        image = composite(dataset.image(image_id), config.grid)
        local = [
            run_trial(config, entry, backend, dataset, config_index=ci, entry_index=ei, image=image, spec=spec)
            for ei, entry in by_image[image_id]
        ]
        with sink_lock:
            done.extend(local)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        if spec.parallelism == 1:
            for unit in units:
                work(unit)
        else:
            with ThreadPoolExecutor(max_workers=spec.parallelism) as pool:
                futures = [pool.submit(work, u) for u in units]
                try:
                    for f in futures:
                        f.result()
                except BaseException:
                    abort.set()
                    raise
    except (DatasetError, AuthenticationError, KeyboardInterrupt):
        if out is not None:
            done.sort(key=lambda r: (r.config_index, r.entry_index))
            write_records(done, out / "records.partial.jsonl")
            log.error("sweep aborted; %d finished record(s) flushed to %s", len(done), out / "records.partial.jsonl")
        raise

    done.sort(key=lambda r: (r.config_index, r.entry_index))
    report = summarize(done, spec.failure_policy)
    report.metadata.update(
        {
            "seed": dataset.subset.seed,
            "subset_sha256": dataset.subset.digest(),
            "source_sha256": dataset.subset.source_hash,
            "n_configs": len(configs),
            "n_entries": len(entries),
            "n_images": len(dataset.subset.image_ids),
            "backend_kind": backend.kind,
            "backend_identity": backend.identity,
            "backend_errors": sum(r.status == "backend-error" for r in done),
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
    )
    if out is not None:
        _write_outputs(report, done, out)
    return report

