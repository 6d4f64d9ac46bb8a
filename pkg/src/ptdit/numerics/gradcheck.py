"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d sum(fn()) / dx by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(fn().data.sum())
        flat[i] = orig - h
        minus = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute discrepancy, relative to the larger gradient's max magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``sum(fn())`` against central differences.

    Returns the worst relative error over ``inputs``; inputs must hold float64.
    """
    for x in inputs:
        if x.data.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
        x.grad = None
    out = fn()
    out.sum().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    for x, a in zip(inputs, analytic):
        worst = max(worst, max_relative_error(a, numerical_grad(fn, x, h)))
    return worst
