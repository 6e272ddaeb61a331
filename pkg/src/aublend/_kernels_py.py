"""Pure-numpy fallback for the compiled kernels.

Must round exactly like _kernels.pyx: composition applies one weighted delta
field per step (multiply, then add), the nearest-entry scan keeps the lowest
index on ties (numpy argmin semantics).
"""
from __future__ import annotations

import numpy as np


def compose_core(template: np.ndarray, basis_stack: np.ndarray,
                 indices: np.ndarray, weights: np.ndarray, out: np.ndarray) -> None:
    np.copyto(out, template)
    for i in range(indices.shape[0]):
        out += weights[i] * basis_stack[indices[i]]


def nearest_entries(tokens: np.ndarray, entries: np.ndarray, out_idx: np.ndarray) -> None:
    d2 = ((tokens[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
    np.copyto(out_idx, d2.argmin(axis=1))
