"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation is used.  Setting ``MOISTPE_KERNELS=python`` forces the
fallback.
"""
import os

from . import _pykernels

python_kernels = _pykernels

if os.environ.get("MOISTPE_KERNELS", "").lower() == "python":
    _impl = _pykernels
    compiled_kernels = None
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
    compiled_kernels = _impl if _impl is not _pykernels else None

BACKEND = "cython" if _impl is not _pykernels else "python"

h_div = _impl.h_div
h_grad = _impl.h_grad
tridiag_solve = _impl.tridiag_solve
