"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``TRANSMON_OPEN_PURE=1`` forces the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None

if _compiled is not None and not os.environ.get("TRANSMON_OPEN_PURE"):
    backend = _compiled
else:
    backend = _fallback
    if _compiled is None:
        log.debug("compiled kernels unavailable, using numpy fallback")


def get_backend(name: str = "auto"):
    """Return ``"compiled"``, ``"python"`` or the default (``"auto"``) kernel module."""
    if name == "auto":
        return backend
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
