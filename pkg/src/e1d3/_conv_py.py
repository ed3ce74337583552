"""Pure-numpy 3D cross-correlation kernels.

Reference fallback for :mod:`e1d3._conv_ext`. All three functions take
pre-padded inputs; padding policy lives in :mod:`e1d3.layers`.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, k, stride, out_shape):
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    do, ho, wo = out_shape
    return win[:, :, : stride * do : stride, : stride * ho : stride, : stride * wo : stride]


def _out_extent(xp_shape, k, stride):
    return tuple((n - k) // stride + 1 for n in xp_shape[2:])


def corr3d(xp, w, stride):
    """Valid cross-correlation of a padded (N, C, D, H, W) input with (O, C, k, k, k)."""
    k = w.shape[2]
    win = _windows(xp, k, stride, _out_extent(xp.shape, k, stride))
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def corr3d_grad_weight(xp, gout, stride, k):
    win = _windows(xp, k, stride, gout.shape[2:])
    gw = np.tensordot(gout, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return np.ascontiguousarray(gw)


def corr3d_grad_input(gout, w, stride, padded_shape):
    gx = np.zeros(padded_shape, dtype=np.float64)
    k = w.shape[2]
    do, ho, wo = gout.shape[2:]
    s = stride
    for a in range(k):
        for b in range(k):
            for e in range(k):
                # (N, O, D, H, W) x (O, C) -> (N, D, H, W, C)
                contrib = np.tensordot(gout, w[:, :, a, b, e], axes=([1], [0]))
                gx[:, :, a : a + s * do : s, b : b + s * ho : s, e : e + s * wo : s] += (
                    contrib.transpose(0, 4, 1, 2, 3)
                )
    return gx
