"""Kernel backend chosen once at import.

The compiled extension is used when it imports cleanly; set
``TEMPSTAB_PURE_PYTHON=1`` to force the numpy/pure-Python kernels.
"""
import os

from . import _pykernels

if os.environ.get("TEMPSTAB_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

BACKEND = kernels.BACKEND
python_kernels = _pykernels


def compiled_kernels():
    """The compiled module, or None when the extension was not built."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels
