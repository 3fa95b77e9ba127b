"""Pixel kernel dispatch.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy implementations in ``_kernels_py`` are used. Set the environment
variable ``TILESCOPE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_c = None
if os.environ.get("TILESCOPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "numpy"

_impl = _c if _c is not None else _kernels_py


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return _impl.bilinear_resize(np.ascontiguousarray(img, dtype=np.float64), int(out_h), int(out_w))


def separable_blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return _impl.separable_blur(
        np.ascontiguousarray(img, dtype=np.float64), np.ascontiguousarray(kernel, dtype=np.float64)
    )


def jpeg_plane(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    return _impl.jpeg_plane(
        np.ascontiguousarray(plane, dtype=np.float64), np.ascontiguousarray(qtable, dtype=np.float64)
    )
