"""Adam with bias correction (default lr 0.001, betas 0.9/0.999, eps 1e-8)."""

from __future__ import annotations

import numpy as np

from histodense.errors import ShapeError
from histodense.nn.layers import Param


def adam_update(value, grad, m, v, t, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update for a single array, in place.

    m and v are updated in place; t is the step number (1-based) already
    incremented for this call.
    """
    if grad.shape != value.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {value.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: list[Param], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            adam_update(p.value, p.grad, self.m[i], self.v[i], self.t,
                        self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
