"""Bilinear resampling expressed as a constant matrix.

Upsampling a mask from the patch grid to pixel resolution is linear, so it is
implemented as one matmul with a precomputed weight matrix.  That keeps the
operation on the autodiff tape for free (matmul already has a gradient) and
makes the interpolation itself trivially testable.

Sampling uses half-pixel centers: source coordinate = (dst + 0.5) * scale
- 0.5, clamped at the edges.
"""

from __future__ import annotations

import numpy as np

__all__ = ["bilinear_matrix"]


def bilinear_matrix(src_hw, dst_hw, dtype=np.float64):
    """Weight matrix ``[dst_h * dst_w, src_h * src_w]``; each row holds the
    (at most four) source weights of one destination pixel and sums to 1."""
    sh, sw = src_hw
    dh, dw = dst_hw
    if min(sh, sw, dh, dw) < 1:
        raise ValueError(f"degenerate sizes {src_hw} -> {dst_hw}")

    def axis_weights(src, dst):
        coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        lo = np.floor(coords).astype(np.int64)
        frac = coords - lo
        hi = np.clip(lo + 1, 0, src - 1)
        lo = np.clip(lo, 0, src - 1)
        return lo, hi, frac

    y0, y1, ty = axis_weights(sh, dh)
    x0, x1, tx = axis_weights(sw, dw)

    matrix = np.zeros((dh * dw, sh * sw), dtype=dtype)
    rows = np.arange(dh * dw)
    yy0 = np.repeat(y0, dw)
    yy1 = np.repeat(y1, dw)
    tty = np.repeat(ty, dw)
    xx0 = np.tile(x0, dh)
    xx1 = np.tile(x1, dh)
    ttx = np.tile(tx, dh)

    np.add.at(matrix, (rows, yy0 * sw + xx0), (1 - tty) * (1 - ttx))
    np.add.at(matrix, (rows, yy0 * sw + xx1), (1 - tty) * ttx)
    np.add.at(matrix, (rows, yy1 * sw + xx0), tty * (1 - ttx))
    np.add.at(matrix, (rows, yy1 * sw + xx1), tty * ttx)
    return matrix
