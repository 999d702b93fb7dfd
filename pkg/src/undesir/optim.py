"""Adam with bias correction, shared by the mask optimizer and the trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Array, as_f64


class NonFiniteGradient(RuntimeError):
    """Raised when an update is attempted with NaN or Inf in the gradient."""


@dataclass
class AdamState:
    m: Array
    v: Array

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64))


def adam_step(params: Array, grad: Array, state: AdamState, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[Array, AdamState]:
    """One Adam update; returns new parameters and state, inputs untouched."""
    params = as_f64(params)
    grad = as_f64(grad)
    if params.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
    if t < 1:
        raise ValueError("step index t starts at 1")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v)
