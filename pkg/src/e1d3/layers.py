"""Layer primitives with explicit forward and backward passes.

Every forward returns ``(output, cache)``; the matching backward takes the
cache and the upstream gradient. Arrays are float64 with layout
(batch, channel, depth, height, width).
"""
import numpy as np

from . import kernels
from .errors import ShapeMismatch

DEFAULT_SLOPE = 0.01


def _check5(x, name="x"):
    if x.ndim != 5:
        raise ShapeMismatch(f"{name} must have 5 axes (N, C, D, H, W), got shape {x.shape}")


def conv3_forward(x, w, b, stride=1):
    """Zero-padded 3D convolution with "same" padding.

    Total padding along each axis is ``k - 1``, split evenly, so stride 1
    preserves the extent and stride 2 gives ``ceil(n / 2)``.
    """
    _check5(x)
    if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4]:
        raise ShapeMismatch(f"kernel must be (O, C, k, k, k), got {w.shape}")
    k = w.shape[2]
    if k % 2 != 1:
        raise ShapeMismatch(f"conv kernel size must be odd, got {k}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
    if stride not in (1, 2):
        raise ShapeMismatch(f"stride must be 1 or 2, got {stride}")
    if min(x.shape[2:]) < 1:
        raise ShapeMismatch(f"empty spatial extent {x.shape[2:]}")
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    y = kernels.corr3d(xp, np.ascontiguousarray(w), stride)
    y += b[None, :, None, None, None]
    return y, (xp, w, stride, x.shape)


def conv3_backward(cache, grad_out):
    xp, w, stride, x_shape = cache
    k = w.shape[2]
    p = (k - 1) // 2
    expected = (x_shape[0], w.shape[0]) + tuple(
        (n + 2 * p - k) // stride + 1 for n in x_shape[2:]
    )
    if grad_out.shape != expected:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != forward output {expected}")
    g = np.ascontiguousarray(grad_out, dtype=np.float64)
    gxp = kernels.corr3d_grad_input(g, np.ascontiguousarray(w), stride, xp.shape)
    d, h, wd = x_shape[2:]
    grad_x = np.ascontiguousarray(gxp[:, :, p : p + d, p : p + h, p : p + wd])
    grad_w = kernels.corr3d_grad_weight(xp, g, stride, k)
    grad_b = g.sum(axis=(0, 2, 3, 4))
    return grad_x, grad_w, grad_b


def convtranspose3_forward(x, w, b, stride=2):
    """Transposed convolution, the adjoint of an unpadded strided conv.

    ``w`` has layout (in_channels, out_channels, k, k, k); with ``k == stride``
    the output extent is exactly ``stride * n``.
    """
    _check5(x)
    if w.ndim != 5 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"input channels {x.shape[1]} do not match kernel {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[1]} output channels")
    k = w.shape[2]
    out_shape = (x.shape[0], w.shape[1]) + tuple((n - 1) * stride + k for n in x.shape[2:])
    xc = np.ascontiguousarray(x, dtype=np.float64)
    y = kernels.corr3d_grad_input(xc, np.ascontiguousarray(w), stride, out_shape)
    y += b[None, :, None, None, None]
    return y, (xc, w, stride)


def convtranspose3_backward(cache, grad_out):
    x, w, stride = cache
    k = w.shape[2]
    expected = (x.shape[0], w.shape[1]) + tuple((n - 1) * stride + k for n in x.shape[2:])
    if grad_out.shape != expected:
        raise ShapeMismatch(f"grad_out shape {grad_out.shape} != forward output {expected}")
    g = np.ascontiguousarray(grad_out, dtype=np.float64)
    grad_x = kernels.corr3d(g, np.ascontiguousarray(w), stride)
    grad_w = kernels.corr3d_grad_weight(g, x, stride, k)
    grad_b = g.sum(axis=(0, 2, 3, 4))
    return grad_x, grad_w, grad_b


def leaky_relu_forward(x, slope=DEFAULT_SLOPE):
    y = np.where(x > 0, x, slope * x)
    return y, (x, slope)


def leaky_relu_backward(cache, grad_out):
    x, slope = cache
    # derivative at exactly 0 is taken as 1
    return grad_out * np.where(x >= 0, 1.0, slope)


def concat_channels(a, b):
    _check5(a, "a")
    _check5(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(split, grad_out):
    return grad_out[:, :split], grad_out[:, split:]


def softmax_channels(x):
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_backward(p, grad_p):
    """Pull a gradient w.r.t. softmax probabilities back to the logits."""
    return p * (grad_p - (p * grad_p).sum(axis=1, keepdims=True))
