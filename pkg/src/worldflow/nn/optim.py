"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..errors import TrainingDivergenceError
from .params import ParameterStore


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Cosine-annealed learning rate; exactly 0 at the final step.

    ``step`` counts from 0 to total_steps-1. An optional linear warmup ramps
    from base_lr/warmup_steps to base_lr over the first ``warmup_steps`` steps.
    """
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - 1 - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adaptive-moment update with weight decay applied directly to weights.

    The decay term is ``p -= lr * weight_decay * p``, separate from the
    gradient-driven moment update, so decay strength does not depend on the
    gradient scale.
    """

    def __init__(self, store: ParameterStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.exp_avg = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.exp_avg_sq = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient for {name!r} at step {t}")
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            denom = np.sqrt(v / bc2) + self.eps
            p.data -= lr * (m / bc1) / denom
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data

    # -- checkpoint plumbing --------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.store.names():
            out[f"opt.m.{name}"] = self.exp_avg[name]
            out[f"opt.v.{name}"] = self.exp_avg_sq[name]
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray], step_count: int) -> None:
        for name in self.store.names():
            self.exp_avg[name] = np.asarray(arrays[f"opt.m.{name}"], dtype=np.float64
                                            if self.store.dtype == np.float64 else np.float32)
            self.exp_avg_sq[name] = np.asarray(arrays[f"opt.v.{name}"], dtype=self.exp_avg[name].dtype)
        self.step_count = int(step_count)
