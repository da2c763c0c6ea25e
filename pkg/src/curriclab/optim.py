"""Adam with linear warmup and inverse-square-root decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, NumericalDivergence


@dataclass
class LrSchedule:
    peak_lr: float = 1e-3
    warmup_steps: int = 4000
    init_lr: float = 1e-7

    def __call__(self, step: int) -> float:
        """Learning rate used for update number ``step`` (1-based)."""
        if step <= self.warmup_steps:
            return self.init_lr + (self.peak_lr - self.init_lr) * step / self.warmup_steps
        return self.peak_lr * math.sqrt(self.warmup_steps / step)


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


def adam_step(params: ModelParams, grads, schedule: LrSchedule, adam: AdamConfig = AdamConfig()) -> ModelParams:
    """One bias-corrected Adam update, in place. Returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalDivergence(params.step, f"non-finite gradient for {name}")
    params.step += 1
    t = params.step
    lr = schedule(t)
    c1 = 1.0 - adam.beta1 ** t
    c2 = 1.0 - adam.beta2 ** t
    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        params.weights[name] -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
    return params
