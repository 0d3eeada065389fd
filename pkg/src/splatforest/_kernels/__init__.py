"""Rasterization kernel backends.

The compiled kernel is preferred when its extension module built; the
NumPy implementation is the always-available reference. Override with
``SPLATFOREST_BACKEND=python`` or ``=cython`` (the latter raises if the
extension is missing).
"""

from __future__ import annotations

import os

from . import raster_py

_requested = os.environ.get("SPLATFOREST_BACKEND", "").strip().lower()

if _requested == "python":
    _backend = raster_py
else:
    try:
        from . import raster_cy as _backend  # type: ignore[no-redef]
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "SPLATFOREST_BACKEND=cython but the compiled kernel is not built"
            ) from None
        _backend = raster_py

BACKEND = _backend.BACKEND
rasterize_forward = _backend.rasterize_forward
rasterize_backward = _backend.rasterize_backward


def get_backend(name: str | None = None):
    """The kernel module in use, or a specific one by name ("python"/"cython")."""
    if name is None:
        return _backend
    if name == "python":
        return raster_py
    if name == "cython":
        from . import raster_cy
        return raster_cy
    raise ValueError(f"unknown backend {name!r}")
