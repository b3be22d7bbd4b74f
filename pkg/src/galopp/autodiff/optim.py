"""Adam optimizer and global gradient-norm clipping for tensor parameters."""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np

from .engine import Tensor


def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              step: int, lr: float, beta1: float, beta2: float,
              eps: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns (new_value, new_m, new_v).

    Pure function of its arguments; ``step`` is the 1-based update count.
    A zero gradient with zero moment state leaves the value unchanged.
    """
    if step < 1:
        raise ValueError("adam_step needs a 1-based step count")
    new_m = beta1 * m + (1.0 - beta1) * grad
    new_v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = new_m / (1.0 - beta1 ** step)
    v_hat = new_v / (1.0 - beta2 ** step)
    new_value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_value, new_m, new_v


class Adam:
    """Adam over a named parameter dict, updating tensor values in place."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """In-place variant of ``adam_step`` over every parameter; skipped
        moments stay decayed-consistent because a missing grad counts as
        zero."""
        self.step_count += 1
        m_correction = 1.0 - self.beta1 ** self.step_count
        v_correction = 1.0 - self.beta2 ** self.step_count
        scale = self.lr / m_correction
        for key, p in self.params.items():
            m, v = self._m[key], self._v[key]
            m *= self.beta1
            v *= self.beta2
            if p.grad is not None:
                m += (1.0 - self.beta1) * p.grad
                v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.values = p.values - scale * m / (np.sqrt(v / v_correction)
                                               + self.eps)


def global_grad_norm(params: Dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_grad_norm_(params: Dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
