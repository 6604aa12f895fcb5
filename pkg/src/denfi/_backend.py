"""Kernel backend selection.

The compiled extension is used when importable; ``DENFI_BACKEND=python``
forces the numpy fallback.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


compiled = _load_compiled()

if os.environ.get("DENFI_BACKEND", "").lower() == "python" or compiled is None:
    kernels = _pykernels
    name = "python"
else:
    kernels = compiled
    name = "compiled"

log.debug("denfi kernel backend: %s", name)


def get(backend=None):
    """Return the kernel module for ``backend`` ('compiled', 'python' or None)."""
    if backend is None:
        return kernels
    if backend == "python":
        return _pykernels
    if backend == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {backend!r}")
