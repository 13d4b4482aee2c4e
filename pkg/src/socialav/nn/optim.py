"""
Adam optimizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], cfg: AdamConfig, t: int) -> None:
    """Bias-corrected Adam update at step ``t`` (1-based); gradients are zeroed afterwards.

    Moment buffers are keyed by the parameter's position in ``params``.
    """
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = cfg.m.get(i)
        v = cfg.v.get(i)
        m = (1.0 - cfg.beta1) * g if m is None else cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = (1.0 - cfg.beta2) * g * g if v is None else cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        cfg.m[i] = m
        cfg.v[i] = v
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = (p.data - update).astype(p.dtype)
        p.zero_grad()


class Adam:
    """Stateful wrapper holding the step counter."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.config = AdamConfig(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.config, self.t)
