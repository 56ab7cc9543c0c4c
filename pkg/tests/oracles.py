"""Independent reference computations used only by the tests.

Nothing here imports the code paths it checks.
"""

import math
from fractions import Fraction

import numpy as np


def brute_force_mask(width, height, cells, line_width=1):
    """Per-pixel enumeration of grid coverage from the line-placement rule."""
    def positions(extent):
        return [math.floor(Fraction(k * extent, cells) + Fraction(1, 2)) for k in range(1, cells)]

    xs, ys = positions(width), positions(height)
    # every pixel is tested against every line, no separability shortcut
    yy, xx = np.mgrid[0:height, 0:width]
    covered = np.zeros((height, width), dtype=bool)
    for p in xs:
        covered |= (p <= xx) & (xx < p + line_width)
    for p in ys:
        covered |= (p <= yy) & (yy < p + line_width)
    return covered


def exact_blend(channel, grid_channel, alpha):
    """Round-half-up of the convex blend in exact decimal arithmetic."""
    a = Fraction(repr(float(alpha)))
    return min(255, max(0, math.floor(a * grid_channel + (1 - a) * channel + Fraction(1, 2))))


def raster_metrics(a, b, canvas=64):
    """IoU/GIoU by counting unit cells whose centers fall inside each box.

    Boxes are integer corner tuples; cell (i, j) covers [i, i+1) x [j, j+1).
    """
    centers = np.arange(canvas) + 0.5
    cx, cy = np.meshgrid(centers, centers, indexing="xy")

    def cells(box):
        x1, y1, x2, y2 = box
        return (cx >= x1) & (cx < x2) & (cy >= y1) & (cy < y2)

    ma, mb = cells(a), cells(b)
    inter = int((ma & mb).sum())
    union = int((ma | mb).sum())
    hull = cells((min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])))
    c = int(hull.sum())
    iou = inter / union
    return iou, iou - (c - union) / c


def perimeter_pixels(x1, y1, x2, y2, stroke=1):
    """Pixels of a half-open rectangle outline, enumerated one by one."""
    out = set()
    for y in range(y1, y2):
        for x in range(x1, x2):
            if x < x1 + stroke or x >= x2 - stroke or y < y1 + stroke or y >= y2 - stroke:
                out.add((x, y))
    return out
