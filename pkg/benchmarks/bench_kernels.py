"""Time the compiled pixel kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 512]

Prints one line per kernel with the best-of-N wall time for each backend
and the speedup. Exits with status 1 if the extension is not built.
"""

import argparse
import sys
import timeit

import numpy as np

from tilescope import _kernels_py
from tilescope.augment import gaussian_kernel, quant_table

try:
    from tilescope import _ckernels
except ImportError:
    _ckernels = None


def cases(size: int, rng: np.random.Generator):
    img = rng.random((size, size, 3))
    plane = rng.random((size, size)) * 255 - 128
    kernel = gaussian_kernel(2.0)
    qt = quant_table(75).astype(np.float64)
    return {
        "bilinear_resize": lambda m: m.bilinear_resize(img, size * 3 // 4, size + 37),
        "separable_blur": lambda m: m.separable_blur(img, kernel),
        "jpeg_plane": lambda m: m.jpeg_plane(plane, qt),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.size, rng).items():
        # the two backends must agree before their timings mean anything
        assert np.allclose(fn(_ckernels), fn(_kernels_py), atol=1e-9), name
        slow = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        fast = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:<18}{slow * 1e3:>12.2f}{fast * 1e3:>12.2f}{slow / fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
