"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Parameter, global_norm


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None):
        names = [p.name for p in params]
        if any(n is None for n in names) or len(set(names)) != len(names):
            raise ValueError("optimizer parameters need unique names")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.step_count = 0
        self.last_grad_norm = 0.0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        missing = [p.name for p in self.params if p.name not in grads]
        if missing:
            raise KeyError(f"missing gradient for parameter(s): {missing[:5]}")
        norm = global_norm(grads[p.name] for p in self.params)
        self.last_grad_norm = norm
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-6)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p in self.params:
            g = grads[p.name] * scale
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)


def full_gradients(params: Sequence[Parameter], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Fill zeros for parameters the loss did not reach (e.g. an unused head)."""
    out = dict(grads)
    for p in params:
        if p.name not in out:
            out[p.name] = np.zeros_like(p.data)
    return out
