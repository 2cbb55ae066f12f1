"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``KACLAB_BACKEND=python`` is set, the pure-Python twin is
used.  ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

if os.environ.get("KACLAB_BACKEND", "").strip().lower() == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "compiled"
    except ImportError:  # extension not built
        kernels = _pykernels
        BACKEND = "python"


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("compiled", "python") or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
