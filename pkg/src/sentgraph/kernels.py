"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``SENTGRAPH_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _bm25_py

BACKEND = "python"
bm25_scores = _bm25_py.bm25_scores

if os.environ.get("SENTGRAPH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _bm25  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        bm25_scores = _bm25.bm25_scores

__all__ = ["BACKEND", "bm25_scores"]
