"""
Prior-attention actor-critic network.

Every observation row (ego first, then neighbours) goes through the same
two-layer perceptron, neighbour rows are extended with their driving-prior
vectors, the ego row queries all rows through multi-head attention and a small
decoder produces action logits and a state value.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import PolicyConfig
from .dpl import DplModel, infer_prior
from .env import Action, Observation
from .error_handler import ShapeError, ValidationError
from .nn import MLP, Linear, Module, MultiHeadAttention, Tensor, concat, reshape
from .nn import checkpoint as ckpt


@dataclass
class PolicyOutput:
    logits: np.ndarray
    value: float


@dataclass
class PolicyBatch:
    """Network inputs: rows (B, 1+N, 4), mask (B, 1+N), priors (B, 1+N, m)."""
    rows: np.ndarray
    mask: np.ndarray
    priors: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def take(self, index: np.ndarray) -> "PolicyBatch":
        return PolicyBatch(self.rows[index], self.mask[index], self.priors[index])


class PolicyNet(Module):
    def __init__(self, cfg: PolicyConfig, prior_dim: int, rng: np.random.Generator):
        self.prior_dim = prior_dim
        self.n_actions = cfg.n_actions
        self.psi = MLP(4, list(cfg.encoder_widths), rng)
        self.attention = MultiHeadAttention(self.psi.out_features + prior_dim, cfg.att_dim, cfg.heads, cfg.att_out, rng)
        self.decoder = MLP(cfg.att_out, list(cfg.decoder_widths), rng)
        self.logits_head = Linear(self.decoder.out_features, cfg.n_actions, rng)
        self.value_head = Linear(self.decoder.out_features, 1, rng)

    def forward_batch(self, batch: PolicyBatch) -> Tuple[Tensor, Tensor]:
        """(logits (B, n_actions), values (B,))."""
        x = encode_state(self, batch.rows, batch.mask)
        x = concat_priors(x, batch.priors, batch.mask)
        at, _ = self.attention(x, batch.mask)
        h = self.decoder(at)
        values = self.value_head(h)
        return self.logits_head(h), reshape(values, (values.shape[0],))

    def attention_weights(self, batch: PolicyBatch) -> np.ndarray:
        x = concat_priors(encode_state(self, batch.rows, batch.mask), batch.priors, batch.mask)
        _, weights = self.attention(x, batch.mask)
        return weights


def build_policy(cfg: PolicyConfig, prior_dim: int, seed: int) -> PolicyNet:
    return PolicyNet(cfg, prior_dim, np.random.default_rng(seed))


def load_policy(path: str, cfg: PolicyConfig, prior_dim: int) -> PolicyNet:
    net = PolicyNet(cfg, prior_dim, np.random.default_rng(0))
    ckpt.load_into(net, path)
    return net


def encode_state(net: PolicyNet, rows: np.ndarray, mask: np.ndarray) -> Tensor:
    """Row-wise encoder; masked rows come out as exact zeros."""
    rows = np.asarray(rows, dtype=net.psi.layers[0].weight.dtype)
    keep = np.asarray(mask, dtype=rows.dtype)[..., None]
    return net.psi(Tensor(rows)) * keep


def concat_priors(x: Tensor, priors: np.ndarray, mask: np.ndarray) -> Tensor:
    """Append each row's prior; ego and masked rows get zeros."""
    priors = np.asarray(priors, dtype=x.dtype)
    if priors.shape[:2] != x.shape[:2]:
        raise ShapeError(
            f"priors {priors.shape} do not pair with encoded rows {x.shape}", component="policy", operation="concat_priors"
        )
    if priors.shape[2] == 0:
        return x
    z = priors * np.asarray(mask, dtype=x.dtype)[..., None]
    z[:, 0, :] = 0.0
    return concat([x, Tensor(z)], axis=-1)


# ---------------------------------------------------------------------------
# Observation -> batch
# ---------------------------------------------------------------------------

def priors_for(obs: Observation, prior_map: Mapping[int, np.ndarray], prior_dim: int) -> np.ndarray:
    """(N, m) priors aligned with the observation's neighbour rows."""
    out = np.zeros((len(obs.mask), prior_dim), dtype=np.float32)
    if prior_dim == 0:
        return out
    for row, (present, vid) in enumerate(zip(obs.mask, obs.neighbor_ids)):
        if not present:
            continue
        if vid not in prior_map:
            raise ValidationError(f"no prior for neighbour {vid}", component="policy", operation="concat_priors")
        out[row] = prior_map[vid]
    return out


def canonical_rows(neighbors: np.ndarray, mask: np.ndarray, priors: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort present (row, prior) pairs by value, absent rows last.

    Attention sums over rows, and a fixed order makes that sum bit-identical under
    any neighbour permutation.
    """
    keys = np.concatenate([neighbors, priors], axis=1)
    # lexsort: last key is primary
    order = np.lexsort(tuple(keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)) + (~mask,))
    return neighbors[order] * mask[order][:, None], mask[order], priors[order] * mask[order][:, None]


def make_batch(observations: Sequence[Observation], priors: Sequence[np.ndarray]) -> PolicyBatch:
    if len(observations) != len(priors):
        raise ShapeError(
            f"{len(observations)} observations but {len(priors)} prior sets", component="policy", operation="make_batch"
        )
    rows, masks, zs = [], [], []
    for obs, z in zip(observations, priors):
        nb, mk, pz = canonical_rows(obs.neighbors, obs.mask, np.asarray(z, dtype=np.float32))
        rows.append(np.vstack([obs.ego[None], nb]))
        masks.append(np.concatenate([[True], mk]))
        zs.append(np.vstack([np.zeros((1, pz.shape[1]), dtype=np.float32), pz]))
    return PolicyBatch(
        rows=np.asarray(rows, dtype=np.float32),
        mask=np.asarray(masks, dtype=bool),
        priors=np.asarray(zs, dtype=np.float32),
    )


def forward(net: PolicyNet, obs: Observation, priors: np.ndarray) -> PolicyOutput:
    logits, values = net.forward_batch(make_batch([obs], [priors]))
    return PolicyOutput(logits=logits.data[0].copy(), value=float(values.data[0]))


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------

def action_log_probs(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def act(output: PolicyOutput, mode: str, rng: Optional[np.random.Generator] = None) -> Tuple[Action, float]:
    """Pick an action (``sample`` or ``greedy``) and return it with its log-probability."""
    logp = action_log_probs(output.logits)
    if mode == "greedy":
        a = int(np.argmax(logp))
    elif mode == "sample":
        if rng is None:
            raise ValidationError("sample mode needs an rng", component="policy", operation="act")
        cdf = np.cumsum(np.exp(logp))
        a = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))
    else:
        raise ValidationError(f"unknown action mode {mode!r}", component="policy", operation="act")
    return Action(a), float(logp[a])


def prior_vectors(dpl_model: DplModel, histories: Mapping[int, np.ndarray], ids: Sequence[int]) -> Dict[int, np.ndarray]:
    """Driving priors for the listed vehicles, each inferred from its own history."""
    return {vid: infer_prior(dpl_model, histories[vid]) for vid in ids if vid >= 0}
