"""Select compiled or numpy kernels at import time.

Set ``OVERLAPNET_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

from . import _pykernels

kernels = _pykernels
NAME = "numpy"

if os.environ.get("OVERLAPNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        NAME = "cython"


def get(name: str):
    """Kernel module by name: ``"cython"`` or ``"numpy"``."""
    if name == "numpy":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
