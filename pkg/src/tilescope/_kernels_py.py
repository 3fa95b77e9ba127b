"""Pure numpy versions of the pixel kernels.

These are the reference implementations; ``_ckernels.pyx`` mirrors them
operation for operation so both paths agree to rounding error.
"""

from __future__ import annotations

import numpy as np


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric reflection (``d c b a | a b c d | d c b a``)."""
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def _bilinear_axis(n_in: int, n_out: int):
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    y0, y1, fy = _bilinear_axis(img.shape[0], out_h)
    x0, x1, fx = _bilinear_axis(img.shape[1], out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def separable_blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = (len(kernel) - 1) // 2
    h, w = img.shape[:2]
    tmp = np.zeros_like(img)
    for k, wk in enumerate(kernel):
        tmp += wk * img[reflect_index(np.arange(h) + k - r, h)]
    out = np.zeros_like(img)
    for k, wk in enumerate(kernel):
        out += wk * tmp[:, reflect_index(np.arange(w) + k - r, w)]
    return out


def dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    t = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    t[0] /= np.sqrt(2.0)
    return t


_T = dct_matrix()


def jpeg_plane(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Quantize/dequantize every 8x8 block of a level-shifted plane.

    ``plane`` is in [-128, 127] units with both sides multiples of 8.
    """
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = _T @ blocks @ _T.T
    coef = np.rint(coef / qtable) * qtable
    rec = _T.T @ coef @ _T
    return rec.transpose(0, 2, 1, 3).reshape(h, w)
