"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``ENCLAVEFM_PURE_PYTHON=1`` is set, the pure-Python twin is used. Both
backends produce identical integers.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("ENCLAVEFM_PURE_PYTHON") != "1":
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend

BACKEND: str = _active.BACKEND
mix64 = _active.mix64
fill_weights = _active.fill_weights
bucket_table = _active.bucket_table
raw_scores = _active.raw_scores
topk = _active.topk


def available_backends() -> dict:
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
