"""Grid geometry and alpha compositing of a grid pattern onto an RGB image.

A grid with ``cells`` cells per axis draws ``cells - 1`` interior lines on
each axis. The image border is never drawn. Covered pixels are blended as
``out = alpha * color + (1 - alpha) * in`` on 8-bit values, rounded half up
in exact arithmetic.
"""

from __future__ import annotations

import io
import os
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import ConfigurationError, MissingFileError

__all__ = [
    "BLACK",
    "WHITE",
    "COLOR_NAMES",
    "ImageBuffer",
    "GridConfig",
    "GridMask",
    "parse_color",
    "color_name",
    "line_positions",
    "render_grid_mask",
    "composite",
]

BLACK = (0, 0, 0)
WHITE = (255, 255, 255)
COLOR_NAMES = {"black": BLACK, "white": WHITE}
# keeps 2 * den * 255 well inside int64 for the blend kernel
ALPHA_MAX_DENOMINATOR = 10**12


def parse_color(value) -> tuple[int, int, int]:
    """Accept a color name, ``#rrggbb`` or an RGB triple."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in COLOR_NAMES:
            return COLOR_NAMES[key]
        if key.startswith("#") and len(key) == 7:
            try:
                return tuple(int(key[i : i + 2], 16) for i in (1, 3, 5))
            except ValueError:
                pass
        raise ConfigurationError(f"unknown color {value!r}")
    rgb = tuple(int(c) for c in value)
    if len(rgb) != 3 or any(c < 0 or c > 255 for c in rgb):
        raise ConfigurationError(f"color must be three channels in [0, 255], got {value!r}")
    return rgb


def color_name(rgb) -> str:
    for name, value in COLOR_NAMES.items():
        if tuple(rgb) == value:
            return name
    return "#{:02x}{:02x}{:02x}".format(*rgb)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded 8-bit RGB raster, shape (height, width, 3), read-only."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ConfigurationError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ConfigurationError("image must have positive width and height")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer):
                raise ConfigurationError(f"pixel dtype must be integral, got {px.dtype}")
            if px.min() < 0 or px.max() > 255:
                raise ConfigurationError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        else:
            px = px.copy() if px.flags.writeable else px
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None

    @classmethod
    def blank(cls, width: int, height: int, color=WHITE) -> "ImageBuffer":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = parse_color(color)
        return cls(px)

    @classmethod
    def from_pil(cls, img: Image.Image) -> "ImageBuffer":
        # grayscale is replicated, any alpha channel is dropped
        if img.mode != "RGB":
            img = img.convert("RGB")
        return cls(np.asarray(img, dtype=np.uint8))

    @classmethod
    def open(cls, path) -> "ImageBuffer":
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(f"image not found: {path}")
        with Image.open(path) as img:
            img.load()
            return cls.from_pil(img)

    def to_pil(self) -> Image.Image:
        return Image.fromarray(np.array(self.pixels), mode="RGB")

    def save(self, path) -> Path:
        """Write as PNG (or whatever the suffix asks for) atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fmt = Image.registered_extensions().get(path.suffix.lower(), "PNG")
        tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
        self.to_pil().save(tmp, format=fmt)
        os.replace(tmp, path)
        return path

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.to_pil().save(buf, format="PNG")
        return buf.getvalue()

    def raw_bytes(self) -> bytes:
        """Shape header plus raw pixel bytes; stable under lossless re-encoding."""
        return f"{self.width}x{self.height}:".encode() + self.pixels.tobytes()


@dataclass(frozen=True)
class GridConfig:
    cells: int = 9
    color: tuple[int, int, int] = BLACK
    alpha: float = 0.3
    line_width: int = 1

    def __post_init__(self):
        if isinstance(self.cells, bool) or int(self.cells) != self.cells:
            raise ConfigurationError(f"cells must be an integer, got {self.cells!r}")
        object.__setattr__(self, "cells", int(self.cells))
        object.__setattr__(self, "color", parse_color(self.color))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "line_width", int(self.line_width))
        if self.cells < 2:
            raise ConfigurationError(f"grid needs at least 2 cells per axis, got {self.cells}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.line_width < 1:
            raise ConfigurationError(f"line_width must be >= 1, got {self.line_width}")

    @property
    def color_name(self) -> str:
        return color_name(self.color)

    @property
    def alpha_ratio(self) -> tuple[int, int]:
        """``alpha`` as an exact fraction of its shortest decimal form.

        Blending with the binary float would misplace exact .5 ties
        (0.3 * 0 + 0.7 * 45 = 31.5 evaluates to 31.4999...).
        """
        frac = Fraction(repr(self.alpha)).limit_denominator(ALPHA_MAX_DENOMINATOR)
        return frac.numerator, frac.denominator


@dataclass(frozen=True, eq=False)
class GridMask:
    """Covered-pixel mask. Coverage is separable: a pixel is covered when its
    column or its row is covered."""

    width: int
    height: int
    cols: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)

    @property
    def covered(self) -> np.ndarray:
        return self.rows[:, None] | self.cols[None, :]

    def count(self) -> int:
        nc = int(self.cols.sum())
        nr = int(self.rows.sum())
        return nc * self.height + nr * self.width - nc * nr


def line_positions(extent: int, cells: int) -> list[int]:
    """Start offsets of the ``cells - 1`` interior lines along one axis.

    ``p_k = round_half_up(k * extent / cells)`` computed in exact integer
    arithmetic.
    """
    if cells < 2:
        raise ConfigurationError(f"grid needs at least 2 cells per axis, got {cells}")
    if extent < cells:
        raise ConfigurationError(f"extent {extent} px cannot hold {cells} cells")
    return [(2 * k * extent + cells) // (2 * cells) for k in range(1, cells)]


def _axis_coverage(extent: int, cells: int, line_width: int) -> np.ndarray:
    hit = np.zeros(extent, dtype=bool)
    for p in line_positions(extent, cells):
        hit[p : p + line_width] = True
    return hit


def render_grid_mask(width: int, height: int, config: GridConfig) -> GridMask:
    cols = _axis_coverage(width, config.cells, config.line_width)
    rows = _axis_coverage(height, config.cells, config.line_width)
    return GridMask(width, height, cols, rows)


def composite(image: ImageBuffer, config: GridConfig | None) -> ImageBuffer:
    """Alpha-blend the grid described by ``config`` onto ``image``.

    ``config=None`` is the no-grid passthrough used by the baseline run. The
    input buffer is never modified.
    """
    if config is None:
        return image
    mask = render_grid_mask(image.width, image.height, config)
    color = np.asarray(config.color, dtype=np.int64)
    num, den = config.alpha_ratio
    out = kernels.blend_grid(image.pixels, mask.cols, mask.rows, color, np.int64(num), np.int64(den))
    return ImageBuffer(out)
