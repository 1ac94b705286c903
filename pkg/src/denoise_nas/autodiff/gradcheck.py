"""Central finite-difference gradients, used as an independent oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d wrt by central differences; ``fn`` must rebuild its graph."""
    grad = np.zeros_like(wrt.data, dtype=np.float64)
    flat = wrt.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between backward and finite differences over ``inputs``."""
    for t in inputs:
        t.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        worst = max(worst, max_rel_error(a, numerical_grad(fn, t, h)))
    return worst
