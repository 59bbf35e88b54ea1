"""Kernel backend selection.

The compiled extension is preferred.  ``FEDHAR_BACKEND=python`` forces the
numpy fallback; ``FEDHAR_BACKEND=cython`` makes a missing extension an error.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def _select():
    wanted = os.environ.get("FEDHAR_BACKEND", "").strip().lower()
    if wanted == "python":
        return "python"
    if wanted == "cython":
        if _compiled is None:
            raise ImportError("FEDHAR_BACKEND=cython but fedhar.neural._kernels is not built")
        return "cython"
    if wanted:
        raise ValueError(f"unknown FEDHAR_BACKEND {wanted!r}")
    if _compiled is None:
        log.debug("compiled kernels unavailable, using numpy fallback")
        return "python"
    return "cython"


BACKEND = _select()
kernels = BACKENDS[BACKEND]


def get_kernels(name=None):
    """Kernel module by name; ``None`` gives the active backend."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {sorted(BACKENDS)})") from None
