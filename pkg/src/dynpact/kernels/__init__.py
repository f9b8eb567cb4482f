"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy reference
implementation when it is missing. Set DYNPACT_FORCE_FALLBACK=1 to
force the fallback (useful for cross-checking the two backends).
BACKEND records which one is active.
"""

import os

from . import reference

if os.environ.get("DYNPACT_FORCE_FALLBACK", "") == "1":
    _impl = reference
    BACKEND = "fallback"
else:
    try:
        from . import _accel as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = reference
        BACKEND = "fallback"

spread = _impl.spread
gather = _impl.gather

__all__ = ["spread", "gather", "BACKEND", "reference"]
