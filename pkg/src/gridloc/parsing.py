"""Pull a final ``[x1, y1, x2, y2]`` box out of free-form model text.

Models are asked to reason first and finish with coordinates, so when the
text holds several candidate tuples the last one wins.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .geometry import BBox

__all__ = [
    "FailureReason",
    "ParseFailure",
    "TupleMatch",
    "ParseOutcome",
    "extract_tuple",
    "normalize",
    "parse_prediction",
]


class FailureReason(str, Enum):
    NO_TUPLE = "no-tuple-found"
    MALFORMED = "malformed-numbers"
    DEGENERATE = "degenerate-box"
    OUT_OF_RANGE = "out-of-range"


class ParseFailure(Exception):
    def __init__(self, reason: FailureReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_NUM_RE = re.compile(_NUM)
_GROUP_RE = re.compile(r"\[([^\[\]]*)\]|\(([^()]*)\)")
_SPLIT_RE = re.compile(r"\s*,\s*|\s+")
_KEYED_RE = re.compile(
    r"\bx_?1\s*[=:]\s*(?P<x1>{n})[\s,;]*"
    r"y_?1\s*[=:]\s*(?P<y1>{n})[\s,;]*"
    r"x_?2\s*[=:]\s*(?P<x2>{n})[\s,;]*"
    r"y_?2\s*[=:]\s*(?P<y2>{n})".format(n=_NUM),
    re.IGNORECASE,
)


@dataclass(frozen=True)
class TupleMatch:
    values: tuple[float, float, float, float]
    span: tuple[int, int]


def _group_values(body: str):
    """Four numbers from a bracket body, ``None`` if the body is not a
    4-tuple, or the string ``"malformed"`` if it has four tokens that are
    not all numeric."""
    tokens = [t for t in _SPLIT_RE.split(body.strip()) if t]
    if len(tokens) != 4:
        return None
    if not all(_NUM_RE.fullmatch(t) for t in tokens):
        return "malformed"
    return tuple(float(t) for t in tokens)


def extract_tuple(text: str, extended: bool = False) -> TupleMatch:
    """Return the last bracketed group of exactly four numbers.

    Square brackets and parentheses are accepted, separated by commas or
    whitespace. With ``extended=True`` keyed forms such as
    ``x1=10, y1=20, x2=30, y2=40`` also count. Raises ``ParseFailure``.
    """
    if not isinstance(text, str):
        text = text.decode("utf-8", errors="replace") if isinstance(text, (bytes, bytearray)) else str(text)
    best = None
    saw_malformed = False
    for m in _GROUP_RE.finditer(text):
        body = m.group(1) if m.group(1) is not None else m.group(2)
        vals = _group_values(body)
        if vals == "malformed":
            saw_malformed = True
        elif vals is not None:
            best = TupleMatch(vals, m.span())
    if extended:
        for m in _KEYED_RE.finditer(text):
            if best is None or m.start() > best.span[0]:
                vals = tuple(float(m.group(k)) for k in ("x1", "y1", "x2", "y2"))
                best = TupleMatch(vals, m.span())
    if best is None:
        if saw_malformed:
            raise ParseFailure(FailureReason.MALFORMED, "bracketed 4-tuple with non-numeric tokens")
        raise ParseFailure(FailureReason.NO_TUPLE)
    return best


def normalize(values, dims: tuple[int, int]) -> tuple[BBox, bool]:
    """Turn four raw numbers into an in-image box.

    Values all within [0, 1] are read as fractions of the image size.
    Corners are reordered, then clamped to ``[0, width] x [0, height]``.
    Returns ``(box, was_fractional)``; raises ``ParseFailure``.
    """
    width, height = dims
    if width <= 0 or height <= 0:
        raise ValueError(f"image dims must be positive, got {dims}")
    vals = [float(v) for v in values]
    if len(vals) != 4 or not all(math.isfinite(v) for v in vals):
        raise ParseFailure(FailureReason.MALFORMED, f"non-finite coordinates {values!r}")
    fractional = all(0.0 <= v <= 1.0 for v in vals)
    if fractional:
        vals = [vals[0] * width, vals[1] * height, vals[2] * width, vals[3] * height]
    x1, x2 = sorted((vals[0], vals[2]))
    y1, y2 = sorted((vals[1], vals[3]))
    if x1 == x2 or y1 == y2:
        raise ParseFailure(FailureReason.DEGENERATE, f"zero-area box {tuple(vals)}")
    if x2 <= 0 or y2 <= 0 or x1 >= width or y1 >= height:
        raise ParseFailure(FailureReason.OUT_OF_RANGE, f"box {tuple(vals)} lies outside {width}x{height}")
    cx1, cx2 = min(max(x1, 0.0), width), min(max(x2, 0.0), width)
    cy1, cy2 = min(max(y1, 0.0), height), min(max(y2, 0.0), height)
    if cx1 >= cx2 or cy1 >= cy2:
        raise ParseFailure(FailureReason.DEGENERATE, f"box {tuple(vals)} collapses after clamping")
    return BBox(cx1, cy1, cx2, cy2), fractional


@dataclass(frozen=True)
class ParseOutcome:
    box: BBox | None = None
    span: tuple[int, int] | None = None
    raw: tuple[float, float, float, float] | None = None
    fractional: bool = False
    reason: FailureReason | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.box is not None


def parse_prediction(text, dims: tuple[int, int], extended: bool = False) -> ParseOutcome:
    """extract + normalize; never raises on any input text."""
    try:
        match = extract_tuple(text, extended=extended)
    except ParseFailure as exc:
        return ParseOutcome(reason=exc.reason, detail=exc.detail)
    try:
        box, fractional = normalize(match.values, dims)
    except ParseFailure as exc:
        return ParseOutcome(span=match.span, raw=match.values, reason=exc.reason, detail=exc.detail)
    return ParseOutcome(box=box, span=match.span, raw=match.values, fractional=fractional)
