"""Backend selection for the hot kernels.

The compiled extension is preferred when importable; set AUBLEND_PURE_PYTHON=1
before import to force the numpy fallback. Both backends produce identical
composition bytes and identical nearest-neighbor indices on non-degenerate
data (see tests/test_kernels.py and benchmarks/bench_kernels.py).
"""
from __future__ import annotations

import os

import numpy as np

if os.environ.get("AUBLEND_PURE_PYTHON"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"


def backend() -> str:
    return BACKEND


def compose_core(template: np.ndarray, basis_stack: np.ndarray,
                 indices: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """template + sum_i weights[i] * basis_stack[indices[i]], float64 (V, 3)."""
    out = np.empty_like(template)
    _impl.compose_core(template, basis_stack,
                       np.ascontiguousarray(indices, dtype=np.int64),
                       np.ascontiguousarray(weights, dtype=np.float64), out)
    return out


def nearest_entries(tokens: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the nearest entry (squared L2) per token; lowest index on ties."""
    out = np.empty(tokens.shape[0], dtype=np.int64)
    _impl.nearest_entries(np.ascontiguousarray(tokens, dtype=np.float64),
                          np.ascontiguousarray(entries, dtype=np.float64), out)
    return out
