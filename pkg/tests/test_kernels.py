"""Compiled kernels against the numpy reference."""

import numpy as np
import pytest

from tilescope import _kernels_py, kernels
from tilescope.augment import gaussian_kernel, quant_table

ck = pytest.importorskip("tilescope._ckernels")


def test_backend_selected():
    assert kernels.BACKEND == ("cython" if kernels._c is not None else "numpy")


@pytest.mark.parametrize("shape,out", [((13, 17, 3), (40, 9)), ((64, 64, 1), (32, 32)), ((5, 5, 3), (5, 11))])
def test_resize_parity(rng, shape, out):
    img = rng.random(shape)
    assert np.array_equal(ck.bilinear_resize(img, *out), _kernels_py.bilinear_resize(img, *out))


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5, 6.0])
def test_blur_parity(rng, sigma):
    img = rng.random((19, 23, 3))
    k = gaussian_kernel(sigma)
    assert np.allclose(ck.separable_blur(img, k), _kernels_py.separable_blur(img, k), rtol=0, atol=1e-13)


@pytest.mark.parametrize("qf", [60, 85, 100])
def test_jpeg_parity(rng, qf):
    plane = rng.random((24, 32)) * 255 - 128
    qt = quant_table(qf).astype(float)
    assert np.max(np.abs(ck.jpeg_plane(plane, qt) - _kernels_py.jpeg_plane(plane, qt))) < 1e-9


def test_reflect_index():
    idx = np.arange(-4, 8)
    assert list(_kernels_py.reflect_index(idx, 4)) == [3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]


def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    assert bench.main(["--repeat", "1", "--size", "32"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4
