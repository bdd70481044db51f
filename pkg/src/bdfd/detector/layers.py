"""Forward/backward passes for the few layer types the detector needs.

All tensors are NHWC. Convolution kernels are stored as (out, in, k, k).
Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and that cache.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1 'same' convolution with zero padding of k // 2."""
    n, h, wd, c = x.shape
    f, c_in, k, _ = w.shape
    if c != c_in:
        raise ValueError(f"conv expects {c_in} input channels, got {c}")
    p = k // 2
    if k == 1:
        cols = x.reshape(-1, c)
    else:
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        # (n, h, w, c, k, k) -> (n*h*w, c*k*k), matching w.reshape(f, -1)
        cols = sliding_window_view(xp, (k, k), axis=(1, 2)).reshape(n * h * wd, c * k * k)
    wmat = w.reshape(f, -1)
    out = (cols @ wmat.T + b).reshape(n, h, wd, f)
    return out, (x.shape, cols, w)


def conv_backward(dout: np.ndarray, cache):
    xshape, cols, w = cache
    n, h, wd, c = xshape
    f, _, k, _ = w.shape
    d2 = dout.reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(f, -1)
    if k == 1:
        return dcols.reshape(xshape), dw, db
    p = k // 2
    dcols = dcols.reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd, :] += dcols[..., i, j]
    return dxp[:, p:p + h, p:p + wd, :], dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def maxpool_forward(x: np.ndarray):
    """2x2 max pooling with stride 2; ties go to the first element in the window."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    (n, h, w, c), idx = cache
    dwin = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
