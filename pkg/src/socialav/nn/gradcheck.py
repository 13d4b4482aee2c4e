"""
Finite-difference gradient verification.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor

MIN_COORDS = 50


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-3,
    coords_per_tensor: int = MIN_COORDS,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` must rebuild the scalar output from the current tensor values.
    Tensors larger than ``coords_per_tensor`` are checked on a random sample of
    that many coordinates. Run it on float64 tensors.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        if flat.size <= coords_per_tensor:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + h
            f_plus = float(loss_fn().data)
            flat[c] = original - h
            f_minus = float(loss_fn().data)
            flat[c] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, relative_error(float(grad.reshape(-1)[c]), numeric))
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    return worst
