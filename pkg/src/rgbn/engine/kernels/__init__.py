"""Backend selection for the convolution hot kernels.

The compiled Cython extension is preferred when importable; the numpy
fallback is always available.  Set RGBN_KERNELS=numpy (or =cython) to force
a backend; "cython" raises if the extension was not built.
"""
from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("RGBN_KERNELS", "auto").lower()

if _requested == "numpy":
    _impl = numpy_backend
elif _requested == "cython":
    from . import _convkern as _impl
elif _requested == "auto":
    try:
        from . import _convkern as _impl
    except ImportError:
        _impl = numpy_backend
else:
    raise ValueError(f"unknown RGBN_KERNELS value: {_requested!r}")

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "numpy")."""
    return _impl.NAME
