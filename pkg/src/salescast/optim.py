"""Learnable-parameter state, MSE loss, Adam updates, gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class ParamTensor:
    """A value tensor plus its gradient accumulator and Adam state."""

    value: Tensor
    grad: Tensor = None
    adam_m: Tensor = None
    adam_v: Tensor = None
    step_count: int = 0

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def mse_loss(y_hat: Tensor, y: Tensor):
    """Mean squared error and its gradient wrt y_hat: 2(y_hat - y)/n."""
    if y_hat.shape != y.shape or y_hat.size == 0:
        raise DimensionError(f"mse_loss: shapes {y_hat.shape} vs {y.shape}")
    n = y_hat.shape[0]
    diff = y_hat - y
    loss = float(np.sum(diff**2) / n)
    return loss, 2.0 * diff / n


def adam_step(p: ParamTensor, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update; consumes and zeroes the gradient."""
    p.step_count += 1
    t = p.step_count
    p.adam_m *= beta1
    p.adam_m += (1 - beta1) * p.grad
    p.adam_v *= beta2
    p.adam_v += (1 - beta2) * np.square(p.grad)
    m_hat = p.adam_m / (1 - beta1**t)
    v_hat = p.adam_v / (1 - beta2**t)
    np.sqrt(v_hat, out=v_hat)
    v_hat += eps
    m_hat /= v_hat
    m_hat *= lr
    p.value = p.value - m_hat
    p.zero_grad()


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad**2))
    norm = np.sqrt(total)
    if max_norm is not None and norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * scale
    return norm
