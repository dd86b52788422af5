"""Plain Adam with fixed hyperparameters; no schedule, no warmup."""

from __future__ import annotations

import numpy as np

from .backend import adam_update


class Adam:
    def __init__(self, params: dict, lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        correction = np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        lr_t = self.lr * correction
        for name, p in self.params.items():
            adam_update(p, grads[name], self.m[name], self.v[name], lr_t,
                        self.beta1, self.beta2, self.eps)
