"""Time the compiled grid kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--resolution 96] [--repeat 3]
"""

import argparse
import time

import numpy as np

from dvhsmooth import _backend
from dvhsmooth.dose_model import two_peak
from dvhsmooth.geometry import Region
from dvhsmooth.histogram import _grid_geometry


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--resolution", type=int, default=96)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    fam = two_peak()
    sigma = np.array([1.0, 1.0])
    region = Region.cube(8.0)
    lo, delta, shape, width, ball = _grid_geometry(region, args.resolution)
    levels = np.linspace(0.05, 1.0, 20)
    none = np.zeros((0, 3)), np.zeros(0)
    kernels = {
        "level_sums": lambda b: _backend.level_sums(
            fam.centers, fam.offsets, sigma, lo, delta, shape, levels, width, ball, *none, backend=b
        ),
        "power_sums": lambda b: _backend.power_sums(
            fam.centers, fam.offsets, sigma, lo, delta, shape, 2.0, width, ball, backend=b
        ),
    }
    print(f"grid {shape}, {len(levels)} levels, threads={_backend.num_threads()}, default backend={_backend.NAME}")
    for name, call in kernels.items():
        t_py, ref = best_of(lambda: call("python"), args.repeat)
        if _backend.NAME != "cython":
            print(f"{name:12s} python {t_py:8.3f} s   (compiled kernels not built)")
            continue
        t_cy, out = best_of(lambda: call("cython"), args.repeat)
        err = float(np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-300))
        print(f"{name:12s} python {t_py:8.3f} s   cython {t_cy:8.3f} s   speedup {t_py / t_cy:5.1f}x   max rel diff {err:.1e}")


if __name__ == "__main__":
    main()
