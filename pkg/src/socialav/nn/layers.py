"""
Modules built on ``Tensor``: linear layers, the gated recurrent unit and
ego-query multi-head attention.
"""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..error_handler import CheckpointError, ShapeError, ValidationError
from .tensor import DEFAULT_DTYPE, Parameter, Tensor, concat, matmul, reshape, sigmoid, softmax, swapaxes, tanh


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out: List[Tuple[str, Parameter]] = []
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                value.name = name
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.parameters())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise CheckpointError(
                    f"parameter mismatch: missing {missing}, unexpected {unexpected}",
                    component="nn", operation="load_state_dict",
                )
        for name, value in state.items():
            if name not in params:
                continue
            p = params[name]
            if tuple(value.shape) != p.shape:
                raise CheckpointError(
                    f"{name}: checkpoint shape {tuple(value.shape)} != model shape {p.shape}",
                    component="nn", operation="load_state_dict",
                )
            p.data = np.array(value, dtype=p.dtype)
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 is used for finite-difference checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    def zero_(self) -> "Module":
        for p in self.parameters():
            p.data = np.zeros_like(p.data)
        return self


def uniform_init(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, in_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features, dtype=DEFAULT_DTYPE)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"Linear expects last dim {self.in_features}, got input shape {x.shape}",
                component="nn", operation="linear",
            )
        y = matmul(x, self.weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), self.weight), (-1,))
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Stack of Linear + tanh layers."""

    def __init__(self, in_features: int, widths: List[int], rng: np.random.Generator):
        self.layers = []
        prev = in_features
        for w in widths:
            self.layers.append(Linear(prev, w, rng))
            prev = w
        self.out_features = prev

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = tanh(layer(x))
        return x


class GRUCell(Module):
    """h' = (1 - z) * h + z * h~ with gates read from [x, h]."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.update = Linear(input_size + hidden_size, hidden_size, rng)
        self.reset = Linear(input_size + hidden_size, hidden_size, rng)
        self.candidate = Linear(input_size + hidden_size, hidden_size, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns (next hidden state, update gate)."""
        if x.shape[:-1] != h.shape[:-1] or h.shape[-1] != self.hidden_size:
            raise ShapeError(f"GRUCell: input {x.shape} and hidden {h.shape} disagree", component="nn", operation="gru_cell")
        xh = concat([x, h], axis=-1)
        z = sigmoid(self.update(xh))
        r = sigmoid(self.reset(xh))
        h_tilde = tanh(self.candidate(concat([x, r * h], axis=-1)))
        return (1.0 - z) * h + z * h_tilde, z


def stack_steps(steps: List[Tensor]) -> Tensor:
    """[(B, H)] * T -> (B, T, H)."""
    return concat([reshape(s, (s.shape[0], 1, s.shape[1])) for s in steps], axis=1)


class GRU(Module):
    """Single GRU layer unrolled over a (B, T, F) sequence from a zero state."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.cell = GRUCell(input_size, hidden_size, rng)

    def __call__(self, x: Tensor, h0: Optional[Tensor] = None) -> Tuple[List[Tensor], List[Tensor]]:
        """Returns per-step hidden states and per-step update gates."""
        batch, steps = x.shape[0], x.shape[1]
        h = h0 if h0 is not None else Tensor(np.zeros((batch, self.cell.hidden_size), dtype=x.dtype))
        hs, zs = [], []
        for t in range(steps):
            h, z = self.cell(x[:, t, :], h)
            hs.append(h)
            zs.append(z)
        return hs, zs


class MultiHeadAttention(Module):
    """Scaled dot-product attention where row 0 (the ego) is the only query.

    Each head's output is projected to ``out_dim`` and the projections are summed.
    """

    MASK_BIAS = -1e9

    def __init__(self, in_dim: int, att_dim: int, heads: int, out_dim: int, rng: np.random.Generator):
        if att_dim % heads != 0:
            raise ShapeError(f"attention dim {att_dim} not divisible by {heads} heads", component="nn", operation="attention")
        self.heads = heads
        self.head_dim = att_dim // heads
        self.query = [Linear(in_dim, self.head_dim, rng, bias=False) for _ in range(heads)]
        self.key = [Linear(in_dim, self.head_dim, rng, bias=False) for _ in range(heads)]
        self.value = [Linear(in_dim, self.head_dim, rng, bias=False) for _ in range(heads)]
        self.proj = [Linear(self.head_dim, out_dim, rng) for _ in range(heads)]

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        """x: (B, N, in_dim); mask: (B, N) booleans. Returns ((B, out_dim), weights (B, heads, N))."""
        batch, rows = x.shape[0], x.shape[1]
        if mask is None:
            mask = np.ones((batch, rows), dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (batch, rows):
            raise ShapeError(f"attention mask {mask.shape} does not match rows {(batch, rows)}", component="nn", operation="attention")
        if not mask[:, 0].all():
            raise ValidationError("the ego row (row 0) can never be masked", component="nn", operation="attention")
        bias = Tensor(np.where(mask, 0.0, self.MASK_BIAS).reshape(batch, 1, rows).astype(x.dtype))
        scale = 1.0 / math.sqrt(self.head_dim)

        ego = x[:, 0:1, :]
        out = None
        weights = []
        for m in range(self.heads):
            q = self.query[m](ego)
            k = self.key[m](x)
            v = self.value[m](x)
            scores = matmul(q, swapaxes(k)) * scale + bias
            w = softmax(scores, axis=-1)
            head = reshape(matmul(w, v), (batch, self.head_dim))
            projected = self.proj[m](head)
            out = projected if out is None else out + projected
            weights.append(w.data.reshape(batch, rows))
        return out, np.stack(weights, axis=1)
