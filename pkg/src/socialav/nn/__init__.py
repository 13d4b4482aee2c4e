"""
Minimal numpy autodiff: tensors, layers, Adam, checkpoints and gradient checks.
"""
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .gradcheck import MIN_COORDS, grad_check
from .layers import GRU, MLP, GRUCell, Linear, Module, MultiHeadAttention, stack_steps
from .optim import Adam, AdamConfig, adam_step
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    clip,
    concat,
    exp,
    log,
    log_softmax,
    matmul,
    mean,
    minimum,
    mse,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    swapaxes,
    tanh,
    tsum,
)

__all__ = [
    "Adam", "AdamConfig", "adam_step",
    "GRU", "GRUCell", "Linear", "MLP", "Module", "MultiHeadAttention", "stack_steps",
    "Parameter", "Tape", "Tensor",
    "clip", "concat", "exp", "log", "log_softmax", "matmul", "mean", "minimum", "mse",
    "relu", "reshape", "sigmoid", "softmax", "square", "swapaxes", "tanh", "tsum",
    "MIN_COORDS", "grad_check", "load_checkpoint", "load_into", "save_checkpoint",
]
