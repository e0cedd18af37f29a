"""Finite-difference validation of reverse-mode gradients.

Builds the loss twice around each perturbed parameter entry (central
differences) and compares against the analytic gradient from one backward
pass. Everything runs in float64 so the comparison tolerance is meaningful.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_grad(
    loss_fn: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of a scalar loss w.r.t. each parameter."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn(params).data)
            flat[i] = orig - eps
            lo = float(loss_fn(params).data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(
    loss_fn: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> float:
    """Return the worst relative error between analytic and numeric grads.

    Relative error per parameter is ||g_a - g_n|| / max(||g_a||, ||g_n||, atol).
    The absolute floor keeps parameters with identically-zero true gradients
    (e.g. a key-projection bias, which softmax shift-invariance cancels) from
    comparing two roundoff-sized vectors. Raises AssertionError above ``rtol``.
    """
    if any(p.dtype != np.float64 for p in params):
        raise ValueError("gradient checks require float64 parameters")
    for p in params:
        p.zero_grad()
    loss = loss_fn(params)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_difference_grad(loss_fn, params, eps=eps)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = max(np.linalg.norm(ga), np.linalg.norm(gn), atol)
        rel = float(np.linalg.norm(ga - gn) / denom)
        worst = max(worst, rel)
    if worst > rtol:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} > {rtol:.1e}")
    return worst
