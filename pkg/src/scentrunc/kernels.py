"""Select the greedy kernel implementation at import time.

The compiled extension is preferred. Set ``SCENTRUNC_PURE=1`` to force the
numpy fallback.
"""
import os

from . import _greedy_py

BACKEND = "python"
_impl = _greedy_py

if os.environ.get("SCENTRUNC_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _greedy as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        pass

best_candidate = _impl.best_candidate
farthest_from = _impl.farthest_from


def implementations():
    """Available backends as ``{name: module}``."""
    out = {"python": _greedy_py}
    try:
        from . import _greedy
        out["compiled"] = _greedy
    except ImportError:
        pass
    return out
