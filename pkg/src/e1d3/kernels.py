"""Backend selection for the convolution kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``E1D3_BACKEND=python`` to force the
fallback (handy for debugging and for the backend benchmark).
"""
import contextlib
import logging
import os

from . import _conv_py

logger = logging.getLogger(__name__)

_BACKENDS = {"python": _conv_py}

try:
    from . import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None
else:
    _BACKENDS["compiled"] = _conv_ext


def available_backends():
    return sorted(_BACKENDS)


def _select():
    requested = os.environ.get("E1D3_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise RuntimeError(
                f"E1D3_BACKEND={requested!r} is not available; have {available_backends()}"
            )
        return requested
    if "compiled" in _BACKENDS:
        return "compiled"
    logger.info("compiled conv kernels unavailable, using numpy fallback")
    return "python"


BACKEND = _select()
_impl = _BACKENDS[BACKEND]


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    return _BACKENDS[name or BACKEND]


def corr3d(xp, w, stride):
    return _impl.corr3d(xp, w, stride)


def corr3d_grad_weight(xp, gout, stride, k):
    return _impl.corr3d_grad_weight(xp, gout, stride, k)


def corr3d_grad_input(gout, w, stride, padded_shape):
    return _impl.corr3d_grad_input(gout, w, stride, tuple(padded_shape))


@contextlib.contextmanager
def use_backend(name):
    """Temporarily route every kernel call through backend ``name``."""
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise KeyError(f"backend {name!r} not available; have {available_backends()}")
    saved = _impl, BACKEND
    _impl, BACKEND = _BACKENDS[name], name
    try:
        yield _impl
    finally:
        _impl, BACKEND = saved
