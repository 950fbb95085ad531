"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``TACNET_PURE_PYTHON=1``) the pure-Python twin is used.
"""

import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if not os.environ.get("TACNET_PURE_PYTHON"):
    try:
        from . import _ckernels as kernels  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def available_backends():
    """Mapping of backend name to kernel module, compiled first when present."""
    out = {}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    out["python"] = _pykernels
    return out
