"""Hot numeric kernels, each with a numba loop and a vectorized numpy twin.

Both variants evaluate the same expressions in the same order (blending
is pure integer arithmetic), so their outputs are bit-identical. The public
names dispatch on ``gridloc._accel.USE_NUMBA``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "blend_grid",
    "blend_grid_numpy",
    "blend_grid_numba",
    "box_metrics",
    "box_metrics_numpy",
    "box_metrics_numba",
]


def blend_grid_numpy(pixels, cols, rows, color, num, den):
    """Blend ``color`` into every pixel whose column or row is covered.

    The grid weight is the exact ratio ``num / den``, so
    ``out = floor((num * color + (den - num) * in) / den + 1/2)`` is computed
    in integers and ties round up exactly.

    pixels: (H, W, 3) uint8. cols: (W,) bool. rows: (H,) bool.
    color: (3,) int64. Returns a new uint8 array.
    """
    out = pixels.copy()
    covered = rows[:, None] | cols[None, :]
    src = pixels[covered].astype(np.int64)
    blended = (2 * (num * color + (den - num) * src) + den) // (2 * den)
    out[covered] = np.clip(blended, 0, 255).astype(np.uint8)
    return out


def _blend_grid_loop(pixels, cols, rows, color, num, den):
    h, w, nc = pixels.shape
    out = pixels.copy()
    keep = den - num
    half = den
    twice = 2 * den
    for y in range(h):
        row_hit = rows[y]
        for x in range(w):
            if row_hit or cols[x]:
                for c in range(nc):
                    v = (2 * (num * color[c] + keep * np.int64(pixels[y, x, c])) + half) // twice
                    if v < 0:
                        v = 0
                    elif v > 255:
                        v = 255
                    out[y, x, c] = np.uint8(v)
    return out


blend_grid_numba = njit(_blend_grid_loop)


def box_metrics_numpy(a, b):
    """Row-wise IoU and GIoU of two (N, 4) corner arrays; returns (N, 2)."""
    ax1, ay1, ax2, ay2 = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bx1, by1, bx2, by2 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    iou = inter / union
    hull = (np.maximum(ax2, bx2) - np.minimum(ax1, bx1)) * (
        np.maximum(ay2, by2) - np.minimum(ay1, by1)
    )
    giou = iou - (hull - union) / hull
    return np.stack([iou, giou], axis=1)


def _box_metrics_loop(a, b):
    n = a.shape[0]
    out = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        ax1, ay1, ax2, ay2 = a[i, 0], a[i, 1], a[i, 2], a[i, 3]
        bx1, by1, bx2, by2 = b[i, 0], b[i, 1], b[i, 2], b[i, 3]
        iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
        ih = max(0.0, min(ay2, by2) - max(ay1, by1))
        inter = iw * ih
        union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
        iou = inter / union
        hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
        out[i, 0] = iou
        out[i, 1] = iou - (hull - union) / hull
    return out


box_metrics_numba = njit(_box_metrics_loop)


if USE_NUMBA:
    blend_grid = blend_grid_numba
    box_metrics = box_metrics_numba
else:
    blend_grid = blend_grid_numpy
    box_metrics = box_metrics_numpy
