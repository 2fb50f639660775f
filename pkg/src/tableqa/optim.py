"""Rectified Adam with decoupled weight decay.

The variance rectification term rho_t decides per step whether the adaptive
denominator is trustworthy: rho_inf = 2/(1-beta2) - 1 and
rho_t = rho_inf - 2*t*beta2^t / (1 - beta2^t). While rho_t <= 4 the update
falls back to plain bias-corrected momentum. Decoupled weight decay shrinks
the parameter by (1 - lr*weight_decay) before the gradient step.
"""

from __future__ import annotations

import numpy as np


def radam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    weight_decay: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place update of `param` (and moments `m`, `v`) at step t >= 1."""
    if t < 1:
        raise ValueError("step count starts at 1")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad

    if weight_decay:
        param *= 1.0 - lr * weight_decay

    m_hat = m / (1.0 - beta1 ** t)
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2 ** t
    rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
    if rho_t > 4.0:
        v_hat = np.sqrt(v / (1.0 - beta2_t))
        rect = np.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        param -= lr * rect * m_hat / (v_hat + eps)
    else:
        param -= lr * m_hat


class RAdam:
    """Keeps per-parameter moment state keyed by parameter name."""

    def __init__(
        self,
        lr: float = 1e-3,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, named_params: list[tuple[str, np.ndarray]], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, param in named_params:
            grad = grads.get(name)
            if grad is None:
                continue
            if grad.shape != param.shape:
                raise ValueError(f"gradient for {name} shaped {grad.shape}, param {param.shape}")
            if name not in self._m:
                self._m[name] = np.zeros_like(param)
                self._v[name] = np.zeros_like(param)
            radam_update(
                param, grad, self._m[name], self._v[name], self.t,
                lr=self.lr, weight_decay=self.weight_decay,
                beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            )
