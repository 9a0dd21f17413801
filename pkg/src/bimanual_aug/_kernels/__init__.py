"""Per-pixel hot loops: triangle rasterization, point splatting, diffuse hole filling.

Two interchangeable backends exist. The numba one is used when numba imports and
``BIMANUAL_AUG_DISABLE_NUMBA`` is unset (or "0"); otherwise the pure-numpy path runs.
Both produce bit-identical outputs.
"""

import os

from . import _numpy as numpy_backend

ENV_FLAG = "BIMANUAL_AUG_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(ENV_FLAG, "0").strip().lower() in ("", "0", "false", "no")


numba_backend = None
if _numba_requested():
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_backend = None

backend = numba_backend if numba_backend is not None else numpy_backend
BACKEND_NAME = "numba" if backend is numba_backend else "numpy"

rasterize = backend.rasterize
splat = backend.splat
diffuse_fill = backend.diffuse_fill

__all__ = ["rasterize", "splat", "diffuse_fill", "BACKEND_NAME", "numpy_backend", "numba_backend"]
