"""
Finite-difference gradient suite over every differentiable building block.

Runs in float64 on small randomly initialized layers, so it needs no trained
artifacts. Single layers must agree with central differences to 1e-4, deep
chains (VAE, policy stack) to 1e-3.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .config import DplConfig, PolicyConfig
from .dpl import DplModel, loss as dpl_loss
from .logging_utils import log_with_context, setup_logger
from .nn import GRU, MIN_COORDS, Linear, MultiHeadAttention, Tensor, exp, grad_check, log_softmax, square, tsum
from .nn import mean as tmean
from .policy import PolicyBatch, PolicyNet

logger = setup_logger("socialav.verify")

LAYER_TOLERANCE = 1e-4
CHAIN_TOLERANCE = 1e-3
STEP = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def check_linear(rng: np.random.Generator) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    layer = Linear(5, 4, rng).astype(np.float64)
    x = _leaf(rng, 3, 5)
    return (lambda: tsum(square(layer(x)))), [x, *layer.parameters()]


def check_gru(rng: np.random.Generator) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    gru = GRU(3, 6, rng).astype(np.float64)
    x = _leaf(rng, 2, 5, 3)
    target = rng.standard_normal((2, 6))

    def fn() -> Tensor:
        hs, zs = gru(x)
        return tsum(square(hs[-1] - target)) + tsum(zs[2])

    return fn, [x, *gru.parameters()]


def check_attention(rng: np.random.Generator) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    att = MultiHeadAttention(6, 8, 2, 5, rng).astype(np.float64)
    x = _leaf(rng, 2, 4, 6)
    mask = np.array([[True, True, False, True], [True, False, False, False]])
    target = rng.standard_normal((2, 5))

    def fn() -> Tensor:
        out, _ = att(x, mask)
        return tsum(square(out - target))

    return fn, [x, *att.parameters()]


def check_vae_chain(rng: np.random.Generator) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    cfg = DplConfig(window=5, embed_dim=6, gru_hidden=8, latent_dim=3, kl_beta=0.1)
    model = DplModel(cfg, rng).astype(np.float64)
    P = Tensor(rng.standard_normal((2, cfg.window, 2)) * 0.3, dtype=np.float64)
    eps = rng.standard_normal((2, cfg.latent_dim))

    def fn() -> Tensor:
        mu, log_std = model.encode_tensors(P)
        z = mu + exp(log_std) * eps
        return dpl_loss(P, model.decode_tensors(z), mu, log_std, cfg.kl_beta)

    return fn, model.parameters()


def check_policy_stack(rng: np.random.Generator) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    cfg = PolicyConfig(encoder_widths=[8, 8], att_dim=8, heads=2, att_out=6, decoder_widths=[8])
    net = PolicyNet(cfg, prior_dim=3, rng=rng).astype(np.float64)
    rows = rng.standard_normal((2, 5, 4))
    mask = np.array([[True, True, True, False, False], [True, True, False, False, False]])
    batch = PolicyBatch(rows=rows, mask=mask, priors=rng.standard_normal((2, 5, 3)))
    actions = np.array([0, 2])
    returns = rng.standard_normal(2)

    def fn() -> Tensor:
        logits, values = net.forward_batch(batch)
        picked = log_softmax(logits, axis=-1)[np.arange(2), actions]
        return tmean(picked * -1.0) + tmean(square(values - returns))

    return fn, net.parameters()


SUITE: Sequence[Tuple[str, Callable, float]] = (
    ("linear", check_linear, LAYER_TOLERANCE),
    ("gru", check_gru, LAYER_TOLERANCE),
    ("attention", check_attention, LAYER_TOLERANCE),
    ("vae_chain", check_vae_chain, CHAIN_TOLERANCE),
    ("policy_stack", check_policy_stack, CHAIN_TOLERANCE),
)


def run_grad_checks(seed: int = 0, coords_per_tensor: int = MIN_COORDS) -> List[GradCheckResult]:
    results = []
    for i, (name, build, tolerance) in enumerate(SUITE):
        rng = np.random.default_rng([seed, i])
        fn, tensors = build(rng)
        err = grad_check(fn, tensors, h=STEP, coords_per_tensor=coords_per_tensor, rng=rng)
        result = GradCheckResult(name, err, tolerance)
        level = logging.INFO if result.passed else logging.ERROR
        log_with_context(logger, level, f"grad-check {name}: max relative error {err:.3e} (tolerance {tolerance:.0e})",
                         layer=name, error=err, tolerance=tolerance)
        results.append(result)
    return results
