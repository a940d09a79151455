"""Exact transport kernels: compiled network simplex with a pure-Python fallback.

``solve`` is bound at import to the compiled kernel when it was built and
to the pure-Python twin otherwise.  Setting ``GANLAB_OT_BACKEND=python``
forces the fallback.
"""
import os

from . import _simplex_py

_forced = os.environ.get("GANLAB_OT_BACKEND", "").lower()

try:
    if _forced == "python":
        raise ImportError("pure-Python backend requested")
    from . import _simplex as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _simplex_py.solve}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.solve

BACKEND = "cython" if _compiled is not None else "python"
solve = BACKENDS[BACKEND]

__all__ = ["BACKEND", "BACKENDS", "solve"]
