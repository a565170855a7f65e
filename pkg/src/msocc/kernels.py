"""Backend selection for the likelihood kernel.

The compiled ``_ckernels`` extension is used when it was built; otherwise
the numpy implementation. Set ``MSOCC_BACKEND=python`` to force the
fallback (``cython`` to require the extension).
"""
from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("MSOCC_BACKEND", "").strip().lower()

if _requested == "python":
    loglik_grad = _pykernels.loglik_grad
    BACKEND = "python"
else:
    try:
        from ._ckernels import loglik_grad  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        loglik_grad = _pykernels.loglik_grad
        BACKEND = "python"

__all__ = ["loglik_grad", "BACKEND"]
