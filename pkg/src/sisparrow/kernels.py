"""Kernel backend selection: compiled extension with pure-numpy fallback.

Set ``SISPARROW_KERNELS=python`` to force the fallback (useful for the
backend benchmark and for debugging).
"""

import os

if os.environ.get("SISPARROW_KERNELS", "").lower() == "python":
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

class_sums = _impl.class_sums
class_quadratic = _impl.class_quadratic


def backend() -> str:
    """Name of the active kernel backend ("cython" or "python")."""
    return BACKEND
