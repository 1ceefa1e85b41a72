"""Central finite differences, used as the independent check on ``backward``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0])


def finite_diff_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-6) -> np.ndarray:
    """Estimate d f / d x elementwise by central differences.

    ``x.data`` is perturbed in place and restored; ``f`` receives ``x`` and
    returns a scalar (float or 0-d/1-element tensor).
    """
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(x))
        flat[i] = orig - h
        fm = _scalar(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise discrepancy, relative to the largest gradient magnitude.

    Scaling by the tensor-wide magnitude keeps entries that are nearly zero
    from dominating through finite-difference round-off.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / denom)
