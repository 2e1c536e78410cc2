"""Kernel back-end selection.

The compiled extension is used when it imports; otherwise, or when
``FACEFIT_PURE_PYTHON=1`` is set, the numpy fallback is used. Both back ends
expose ``rasterize``, ``census``, ``hamming`` and ``block_match``.
"""
import os

from facefit import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FACEFIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from facefit import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

rasterize = _impl.rasterize
census = _impl.census
hamming = _impl.hamming
block_match = _impl.block_match

__all__ = ["BACKEND", "rasterize", "census", "hamming", "block_match"]
