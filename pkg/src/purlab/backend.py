"""Selects the conv2d kernel backend at import time.

The compiled core is used when available; ``PURLAB_CONV=numpy`` (or
``cython``) forces a choice. ``benchmarks/bench_conv.py`` compares both.
"""

from __future__ import annotations

import os

from purlab import _convnp

_REQUESTED = os.environ.get("PURLAB_CONV", "auto").lower()

if _REQUESTED not in ("auto", "numpy", "cython"):
    raise ValueError(f"PURLAB_CONV must be auto|numpy|cython, got {_REQUESTED!r}")

if _REQUESTED == "numpy":
    _impl = _convnp
else:
    try:
        from purlab import _convcore as _impl  # type: ignore[no-redef]
    except ImportError:
        if _REQUESTED == "cython":
            raise
        _impl = _convnp

conv2d_forward = _impl.conv2d_forward
conv2d_bwd_input = _impl.conv2d_bwd_input
conv2d_bwd_weight = _impl.conv2d_bwd_weight


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "numpy")."""
    return _impl.NAME
