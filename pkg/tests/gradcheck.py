"""Central finite-difference gradient oracle shared by the test suite.

Kept independent of the autodiff engine: it only re-runs a closure after
perturbing raw arrays in place.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

FD_STEP = 1e-5


def numerical_grads(f: Callable[[], float], arrays: Sequence[np.ndarray],
                    h: float = FD_STEP) -> list[np.ndarray]:
    """d f / d arr for each array, by central differences, mutating in place."""
    out = []
    for arr in arrays:
        assert arr.dtype == np.float64, "finite differences need float64"
        g = np.zeros_like(arr)
        flat, gf = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))
