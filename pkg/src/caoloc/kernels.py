"""Kernel dispatch: compiled extension when importable, Python otherwise.

Set ``CAOLOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("CAOLOC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

sosfilt = _impl.sosfilt
local_maxima = _impl.local_maxima

__all__ = ["BACKEND", "sosfilt", "local_maxima"]
