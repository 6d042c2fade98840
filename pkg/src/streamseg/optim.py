"""AdamW with decoupled weight decay and global gradient-norm clipping."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamW", "clip_grad_norm"]


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`.

    Returns the pre-clip norm. Parameters without gradients are skipped here;
    the optimizer step is where a missing gradient becomes an error.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Update order per step: weight decay is applied directly to the parameter
    (p -= lr*wd*p) before the moment-based update, then bias-corrected first
    and second moments drive p -= lr * m_hat / (sqrt(v_hat) + eps).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-4,
                 weight_decay: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, grad_clip: float | None = 10.0):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"no gradient for parameter {name!r}; "
                                 "run backward() before step()")
        if self.grad_clip is not None:
            clip_grad_norm(self.params, self.grad_clip)
        self.step_count += 1
        t = self.step_count
        correct1 = 1.0 - self.beta1 ** t
        correct2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            p.data -= self.lr * self.weight_decay * p.data
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correct1
            v_hat = v / correct2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
