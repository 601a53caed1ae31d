"""Adam with per-parameter learning-rate scales, and reduce-on-plateau."""
from __future__ import annotations

import numpy as np


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam step; ``t`` is the 1-based step count after increment."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


class Adam:
    def __init__(self, params: dict, scales: dict | None = None, clip: set | None = None,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.scales = scales or {}
        self.clip = clip or set()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float):
        self.t += 1
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            adam_update(p, g, self.m[name], self.v[name], self.t, lr * self.scales.get(name, 1.0),
                        self.beta1, self.beta2, self.eps)
            if name in self.clip:
                np.clip(p, -1.0, 1.0, out=p)


class PlateauScheduler:
    """Multiply the rate by ``factor`` once accuracy stalls for ``patience`` epochs.

    An epoch counts as an improvement when it beats the best accuracy so far
    by at least ``min_delta``. After a decay the stall counter restarts.
    """

    def __init__(self, lr=0.01, factor=0.31, patience=10, min_delta=0.001):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.stalled = 0

    def step(self, accuracy: float) -> float:
        if self.best is None or accuracy >= self.best + self.min_delta:
            self.best = accuracy
            self.stalled = 0
        else:
            self.stalled += 1
            if self.stalled >= self.patience:
                self.lr *= self.factor
                self.stalled = 0
        return self.lr

    def state_dict(self):
        return {"lr": self.lr, "factor": self.factor, "patience": self.patience,
                "min_delta": self.min_delta, "best": self.best, "stalled": self.stalled}

    def load_state_dict(self, d):
        for k, v in d.items():
            setattr(self, k, v)


def plateau_scheduler(history, lr, factor=0.31, patience=10, min_delta=0.001):
    """Learning rate after replaying a whole validation-accuracy history."""
    sched = PlateauScheduler(lr, factor, patience, min_delta)
    for acc in history:
        sched.step(acc)
    return sched.lr
