"""Kernel selection.

The compiled extension is used when it imports; otherwise, or when
``LURK_VECCHIA_BACKEND=python`` is set, the NumPy kernels take over.
"""
import os

from . import _kernels_py

kernels = _kernels_py
if os.environ.get("LURK_VECCHIA_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        kernels = _compiled

BACKEND = kernels.BACKEND


def available_backends():
    """Mapping of backend name to kernel module for what can be imported."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
        out["cython"] = compiled
    except ImportError:
        pass
    return out
