"""Command-line entry point.

Subcommands: overlay, score, sweep, rescore, compare, synth.
Exit codes: 0 success, 1 usage, 2 infrastructure, 3 partial failure with results.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .client import BackendDescriptor, DiskCache, LiveParams, PerturbParams, RetryPolicy, build_backend
from .compositor import GridConfig, ImageBuffer, composite
from .dataset import load_annotations, read_manifest, sample_subset, write_manifest
from .errors import ConfigurationError, GridlocError, InvalidBoxError
from .geometry import BBox, metrics
from .panels import write_panels
from .parsing import ParseFailure, extract_tuple
from .report import AnnotationStyle, render_annotated, side_by_side
from .sweep import EvalDataset, SweepSpec, enumerate_configs, read_records, rescore, run_sweep
from .synthetic import make_coco_fixture

log = logging.getLogger("gridloc")

EXIT_OK, EXIT_USAGE, EXIT_INFRA, EXIT_PARTIAL = 0, 1, 2, 3

DEFAULTS = {
    "annotations": None,
    "images": None,
    "manifest": None,
    "subset": 500,
    "seed": 0,
    "out": "runs/sweep",
    "parallelism": 4,
    "policy": "lenient",
    "panels": 0,
    "sweep": {
        "sizes": [3, 5, 7, 9, 20, 30],
        "colors": ["black", "white"],
        "alphas": [0.1, 0.3, 0.5, 0.7, 1.0],
        "baseline": True,
        "line_width": 1,
        "extended_grammar": False,
    },
    "backend": {
        "kind": "mock-echo",
        "cache": None,
        "replay_identity": None,
        "provider": "openai",
        "model": "gpt-4o",
        "endpoint": None,
        "api_key_env": "OPENAI_API_KEY",
        "temperature": 0.0,
        "max_tokens": 1024,
        "timeout": 120.0,
        "offset": [0.0, 0.0, 0.0, 0.0],
        "offset_mode": "px",
        "jitter": 0.0,
        "fail_prob": 0.0,
        "mock_seed": 0,
        "max_concurrent": 4,
        "retries": 3,
        "base_backoff": 0.5,
        "max_backoff": 30.0,
    },
}


class UsageError(GridlocError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.replace(",", " ").split()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _add_grid_flags(p):
    p.add_argument("--cells", type=int, default=9, help="cells per axis (default 9)")
    p.add_argument("--color", default="black", help="black, white or #rrggbb (default black)")
    p.add_argument("--alpha", type=float, default=0.3, help="grid weight in [0, 1] (default 0.3)")
    p.add_argument("--line-width", type=int, default=1, help="line width in px (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("overlay", help="composite a grid onto one image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_grid_flags(p)

    p = sub.add_parser("score", help="IoU and GIoU of two boxes")
    p.add_argument("--gt", required=True, help='ground truth, e.g. "[0, 0, 10, 10]"')
    p.add_argument("--pred", required=True, help="prediction in the same form")

    p = sub.add_parser("sweep", help="run the configuration sweep")
    p.add_argument("--config", help="TOML run configuration; flags override it")
    p.add_argument("--annotations")
    p.add_argument("--images", help="image directory")
    p.add_argument("--manifest", help="existing subset manifest to reuse")
    p.add_argument("--subset", type=int, help="number of images to sample")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--policy", choices=("lenient", "strict"))
    p.add_argument("--panels", type=int, help="write panels for the K best/worst trials per config")
    p.add_argument("--sizes", type=_csv_list(int))
    p.add_argument("--colors", type=_csv_list(str))
    p.add_argument("--alphas", type=_csv_list(float))
    p.add_argument("--baseline", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--line-width", type=int)
    p.add_argument("--extended-grammar", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--backend", choices=("live", "replay", "cache-replay", "mock-echo", "mock-perturb"))
    p.add_argument("--cache", help="response cache directory")
    p.add_argument("--replay-identity", help="identity of the backend whose cache is replayed")
    p.add_argument("--provider", choices=("openai", "anthropic"))
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--api-key-env")
    p.add_argument("--offset", type=_csv_list(float), help="mock-perturb per-corner offset, 4 values")
    p.add_argument("--offset-mode", choices=("px", "fraction"))
    p.add_argument("--jitter", type=float)
    p.add_argument("--fail-prob", type=float)
    p.add_argument("--max-concurrent", type=int)
    p.add_argument("--retries", type=int)

    p = sub.add_parser("rescore", help="recompute a report from a record log")
    p.add_argument("records")
    p.add_argument("--policy", choices=("lenient", "strict"), default="lenient")
    p.add_argument("--extended-grammar", action="store_true")
    p.add_argument("--out", help="directory for report.csv / report.txt (default: print table)")

    p = sub.add_parser("compare", help="side-by-side original vs grid prediction panels")
    p.add_argument("--image", help="single image mode: image path")
    p.add_argument("--gt", help="single image mode: ground-truth box")
    p.add_argument("--pred-original", help="prediction on the original image")
    p.add_argument("--pred-grid", help="prediction on the grid image")
    _add_grid_flags(p)
    p.add_argument("--run", help="sweep mode: output directory of a finished sweep")
    p.add_argument("--top", type=int, default=2, help="sweep mode: K best and K worst trials per config")
    p.add_argument("-o", "--output", required=True, help="PNG path (single image) or directory (sweep)")

    p = sub.add_parser("synth", help="write a synthetic COCO-style fixture dataset")
    p.add_argument("root")
    p.add_argument("--n-images", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    return parser


def parse_box_arg(text: str) -> BBox:
    """Strict ``[x1, y1, x2, y2]`` parsing for command-line boxes."""
    try:
        match = extract_tuple(text)
        return BBox(*match.values)
    except (ParseFailure, InvalidBoxError) as exc:
        raise UsageError(f"not a valid [x1, y1, x2, y2] box: {text!r} ({exc})") from exc


def _fmt_metric(v: float) -> str:
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def cmd_overlay(args) -> int:
    try:
        config = GridConfig(args.cells, args.color, args.alpha, args.line_width)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    image = ImageBuffer.open(args.input)
    composite(image, config).save(args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_score(args) -> int:
    gt, pred = parse_box_arg(args.gt), parse_box_arg(args.pred)
    m = metrics(pred, gt)
    print(f"iou={_fmt_metric(m.iou)}")
    print(f"giou={_fmt_metric(m.giou)}")
    return EXIT_OK


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: invalid TOML ({exc})") from exc


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


_TOP_FLAGS = ("annotations", "images", "manifest", "subset", "seed", "out", "parallelism", "policy", "panels")
_SWEEP_FLAGS = {"sizes": "sizes", "colors": "colors", "alphas": "alphas", "baseline": "baseline",
                "line_width": "line_width", "extended_grammar": "extended_grammar"}
_BACKEND_FLAGS = {"backend": "kind", "cache": "cache", "replay_identity": "replay_identity",
                  "provider": "provider", "model": "model", "endpoint": "endpoint",
                  "api_key_env": "api_key_env", "offset": "offset", "offset_mode": "offset_mode",
                  "jitter": "jitter", "fail_prob": "fail_prob", "max_concurrent": "max_concurrent",
                  "retries": "retries"}


def resolve_run_config(args) -> dict:
    """Defaults, then the config file, then explicitly given flags."""
    config = copy.deepcopy(DEFAULTS)
    if args.config:
        config = _merge(config, load_config_file(args.config))
    for flag in _TOP_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    for flag, key in _SWEEP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            config["sweep"][key] = value
    for flag, key in _BACKEND_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            config["backend"][key] = value
    if config["backend"]["kind"] == "replay":
        config["backend"]["kind"] = "cache-replay"
    return config


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def backend_descriptor(cfg: dict) -> BackendDescriptor:
    b = cfg["backend"]
    try:
        return BackendDescriptor(
            kind=b["kind"],
            cache_dir=b.get("cache"),
            replay_identity=b.get("replay_identity"),
            live=LiveParams(b["provider"], b["model"], b.get("endpoint"), b["api_key_env"],
                            float(b["temperature"]), int(b["max_tokens"]), float(b["timeout"])),
            perturb=PerturbParams(tuple(b["offset"]), b["offset_mode"], float(b["jitter"]),
                                  float(b["fail_prob"]), int(b["mock_seed"])),
            retry=RetryPolicy(int(b["max_concurrent"]), int(b["retries"]),
                              float(b["base_backoff"]), float(b["max_backoff"])),
        )
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid backend configuration: {exc}") from exc


def cmd_sweep(args) -> int:
    cfg = resolve_run_config(args)
    if not cfg["annotations"] or not cfg["images"]:
        raise UsageError("sweep needs --annotations and --images (or the same keys in --config)")
    s = cfg["sweep"]
    try:
        spec = SweepSpec(
            sizes=s["sizes"], colors=s["colors"], alphas=s["alphas"], include_baseline=bool(s["baseline"]),
            line_width=int(s["line_width"]), failure_policy=cfg["policy"], parallelism=int(cfg["parallelism"]),
            extended_grammar=bool(s["extended_grammar"]),
        )
        enumerate_configs(spec)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    desc = backend_descriptor(cfg)
    if desc.kind == "cache-replay" and not desc.replay_identity:
        found = sorted(DiskCache(desc.cache_dir).identities())
        if len(found) != 1:
            raise UsageError(f"cannot infer --replay-identity; cache holds {found or 'no records'}")
        cfg["backend"]["replay_identity"] = found[0]
        desc = backend_descriptor(cfg)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    index = load_annotations(cfg["annotations"])
    if cfg["manifest"]:
        subset = read_manifest(cfg["manifest"], index)
    else:
        subset = sample_subset(index, int(cfg["subset"]), int(cfg["seed"]))
        cfg["manifest"] = str(write_manifest(subset, out / "manifest.jsonl"))
    (out / "resolved_config.toml").write_text(tomli_w.dumps(_strip_none(cfg)), encoding="utf-8")

    dataset = EvalDataset(index, subset, cfg["images"])
    backend = build_backend(desc)
    log.info("sweep: %d images, %d objects, backend %s", len(subset.image_ids), len(subset.entries), backend.identity)
    report = run_sweep(spec, dataset, backend, out)
    if cfg["panels"]:
        write_panels(read_records(out / "records.jsonl"), dataset, out / "panels", k=int(cfg["panels"]))
    sys.stdout.write(report.to_table())
    print(f"outputs in {out}")
    errors = report.metadata.get("backend_errors", 0)
    if errors:
        print(f"{errors} trial(s) failed at the backend; see records.jsonl", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_rescore(args) -> int:
    path = Path(args.records)
    if not path.is_file():
        raise UsageError(f"record log not found: {path}")
    report = rescore(read_records(path), args.policy, args.extended_grammar)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.run:
        run = Path(args.run)
        cfg = load_config_file(run / "resolved_config.toml")
        index = load_annotations(cfg["annotations"])
        subset = read_manifest(cfg["manifest"], index)
        dataset = EvalDataset(index, subset, cfg["images"])
        written = write_panels(read_records(run / "records.jsonl"), dataset, args.output, k=args.top)
        print(f"wrote {len(written)} panel(s) to {args.output}")
        return EXIT_OK
    if not (args.image and args.gt):
        raise UsageError("compare needs either --run, or --image with --gt")
    try:
        config = GridConfig(args.cells, args.color, args.alpha, args.line_width)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    gt = parse_box_arg(args.gt)
    p_orig = parse_box_arg(args.pred_original) if args.pred_original else None
    p_grid = parse_box_arg(args.pred_grid) if args.pred_grid else None
    original = ImageBuffer.open(args.image)
    style = AnnotationStyle()
    left = render_annotated(original, gt, p_orig, style)
    right = render_annotated(composite(original, config), gt, p_grid, style)
    side_by_side(left, right).save(args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_synth(args) -> int:
    path = make_coco_fixture(args.root, args.n_images, args.seed, (args.width, args.height))
    print(json.dumps({"annotations": str(path), "images": str(Path(args.root) / "images")}))
    return EXIT_OK


COMMANDS = {
    "overlay": cmd_overlay,
    "score": cmd_score,
    "sweep": cmd_sweep,
    "rescore": cmd_rescore,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gridloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridlocError, OSError) as exc:
        print(f"gridloc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
