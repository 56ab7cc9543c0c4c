"""Time the numba and pure-numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--repeat 20]

Both paths are called directly, so the ``GRIDLOC_DISABLE_NUMBA`` flag does
not matter here. Outputs are checked for bit equality before timing.
"""

import argparse
import timeit

import numpy as np

from gridloc import kernels
from gridloc._accel import HAS_NUMBA
from gridloc.compositor import GridConfig, render_grid_mask


def blend_case(width, height, cells, rng):
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    config = GridConfig(cells, (0, 0, 0), 0.3)
    mask = render_grid_mask(width, height, config)
    num, den = config.alpha_ratio
    return pixels, mask.cols, mask.rows, np.zeros(3, dtype=np.int64), np.int64(num), np.int64(den)


def box_case(n, rng):
    a = rng.uniform(0, 500, size=(n, 4))
    b = rng.uniform(0, 500, size=(n, 4))
    for m in (a, b):
        m[:, 2:] = m[:, :2] + rng.uniform(1, 200, size=(n, 2))
    return a, b


def bench(name, numpy_fn, numba_fn, args, repeat):
    ref = numpy_fn(*args)
    row = [name]
    t_np = min(timeit.repeat(lambda: numpy_fn(*args), number=1, repeat=repeat))
    row.append(f"{t_np * 1e3:9.3f}")
    if HAS_NUMBA:
        assert np.array_equal(numba_fn(*args), ref), f"{name}: paths disagree"
        t_nb = min(timeit.repeat(lambda: numba_fn(*args), number=1, repeat=repeat))
        row += [f"{t_nb * 1e3:9.3f}", f"{t_np / t_nb:7.2f}x"]
    else:
        row += ["      n/a", "    n/a"]
    print("  ".join(row))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)

    print(f"{'case':<28}  {'numpy ms':>9}  {'numba ms':>9}  {'speedup':>8}")
    for w, h, cells in [(640, 480, 9), (1920, 1080, 30)]:
        bench(f"blend {w}x{h} {cells}x{cells}".ljust(28), kernels.blend_grid_numpy, kernels.blend_grid_numba,
              blend_case(w, h, cells, rng), args.repeat)
    for n in (1_000, 100_000):
        bench(f"box_metrics n={n}".ljust(28), kernels.box_metrics_numpy, kernels.box_metrics_numba,
              box_case(n, rng), args.repeat)


if __name__ == "__main__":
    main()
