"""
Driving-prior learning: a GRU variational autoencoder over HV position windows.

The encoder embeds each position, runs two stacked GRU layers (the second layer
reads the first layer's update gates), passes the second layer's update gates
through a shared dense layer, mean-pools over time and emits mu / log-std heads.
The decoder projects z to a (window x latent) sequence consumed step by step by
two stacked GRU layers and two dense layers producing positions.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import DplConfig
from .error_handler import TrainingError, ValidationError
from .logging_utils import log_with_context, setup_logger
from .nn import GRU, Adam, Linear, Module, Tensor, clip, exp, mse, reshape, stack_steps, tanh
from .nn import checkpoint as ckpt
from .nn import mean as tmean
from .nn import tsum

logger = setup_logger("socialav.dpl")

LOSS_COLUMNS = ("epoch", "train_mse", "val_mse", "kl")


@dataclass
class GaussianLatent:
    mu: np.ndarray
    sigma: np.ndarray


class DplModel(Module):
    def __init__(self, cfg: DplConfig, rng: np.random.Generator):
        self.window = cfg.window
        self.latent_dim = cfg.latent_dim
        self.log_std_min = cfg.log_std_min
        self.log_std_max = cfg.log_std_max
        H = cfg.gru_hidden
        m = cfg.latent_dim

        self.embed = Linear(2, cfg.embed_dim, rng)
        self.enc_gru1 = GRU(cfg.embed_dim, H, rng)
        self.enc_gru2 = GRU(H, H, rng)
        self.enc_fc = Linear(H, H, rng)
        self.mu_head = Linear(H, m, rng)
        self.log_std_head = Linear(H, m, rng)

        self.dec_in = Linear(m, m * cfg.window, rng)
        self.dec_gru1 = GRU(m, H, rng)
        self.dec_gru2 = GRU(H, H, rng)
        self.dec_fc1 = Linear(H, H, rng)
        self.dec_fc2 = Linear(H, 2, rng)

    def freeze(self) -> "DplModel":
        for p in self.parameters():
            p.requires_grad = False
        return self

    # -- tensor graph --------------------------------------------------------

    def encode_tensors(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """x: (B, window, 2) -> (mu, log_std), each (B, latent)."""
        if x.ndim != 3 or x.shape[1] != self.window or x.shape[2] != 2:
            raise ValidationError(
                f"encoder expects windows of shape (B, {self.window}, 2), got {x.shape}",
                component="dpl", operation="encode",
            )
        e = tanh(self.embed(x))
        _, z1 = self.enc_gru1(e)
        _, z2 = self.enc_gru2(stack_steps(z1))
        feats = tanh(self.enc_fc(stack_steps(z2)))
        pooled = tmean(feats, axis=1)
        mu = self.mu_head(pooled)
        log_std = clip(self.log_std_head(pooled), self.log_std_min, self.log_std_max)
        return mu, log_std

    def decode_tensors(self, z: Tensor) -> Tensor:
        """z: (B, latent) -> (B, window, 2)."""
        batch = z.shape[0]
        seq = reshape(self.dec_in(z), (batch, self.window, self.latent_dim))
        _, g1 = self.dec_gru1(seq)
        h2, _ = self.dec_gru2(stack_steps(g1))
        return self.dec_fc2(tanh(self.dec_fc1(stack_steps(h2))))

    # -- numpy API -----------------------------------------------------------

    def encode(self, window: np.ndarray) -> GaussianLatent:
        w = np.asarray(window, dtype=self.dtype)
        single = w.ndim == 2
        if single:
            w = w[None]
        if w.shape[1] < self.window:
            raise ValidationError(
                f"window has {w.shape[1]} steps, need {self.window} (pad before encoding)",
                component="dpl", operation="encode",
            )
        mu, log_std = self.encode_tensors(Tensor(w))
        out = GaussianLatent(mu=mu.data, sigma=np.exp(log_std.data))
        return GaussianLatent(out.mu[0], out.sigma[0]) if single else out

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=self.dtype)
        single = z.ndim == 1
        out = self.decode_tensors(Tensor(z[None] if single else z)).data
        return out[0] if single else out

    @property
    def dtype(self):
        return self.embed.weight.dtype


def build_model(cfg: DplConfig, seed: int) -> DplModel:
    return DplModel(cfg, np.random.default_rng(seed))


def sample(g: GaussianLatent, eps: np.ndarray) -> np.ndarray:
    """Reparameterized draw z = mu + eps * sigma."""
    eps = np.asarray(eps)
    if eps.shape != g.mu.shape:
        raise ValidationError(f"eps shape {eps.shape} != latent shape {g.mu.shape}", component="dpl", operation="sample")
    return g.mu + eps * g.sigma


def kl_divergence(mu: Tensor, log_std: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, averaged over the batch."""
    per_dim = (mu * mu + exp(2.0 * log_std) - 1.0 - 2.0 * log_std) * 0.5
    return tmean(tsum(per_dim, axis=-1))


def loss(P: Tensor, P_recon: Tensor, mu: Tensor, log_std: Tensor, kl_beta: float) -> Tensor:
    """MSE over every position entry plus kl_beta times the KL term."""
    rec = mse(P_recon, P)
    if kl_beta == 0.0:
        return rec
    return rec + kl_divergence(mu, log_std) * kl_beta


def pad_history(history: np.ndarray, window: int) -> np.ndarray:
    """Last ``window`` positions, left-padded with the first position when shorter."""
    h = np.asarray(history, dtype=np.float32).reshape(-1, 2)
    if len(h) == 0:
        raise ValidationError("history needs at least one position", component="dpl", operation="infer_prior")
    if len(h) >= window:
        return h[-window:]
    pad = np.repeat(h[:1], window - len(h), axis=0)
    return np.concatenate([pad, h], axis=0)


def infer_prior(model: DplModel, history: np.ndarray) -> np.ndarray:
    """Deterministic prior vector (the posterior mean) for one vehicle's history."""
    return model.encode(pad_history(history, model.window)).mu


def extract_windows(positions: np.ndarray, window: int, stride: int) -> List[np.ndarray]:
    """Windows starting at 0, stride, 2*stride, ... plus one anchored at the trajectory end."""
    positions = np.asarray(positions)
    n = len(positions)
    if n < window:
        return []
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    return [positions[s:s + window] for s in starts]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class DplTrainResult:
    model: DplModel
    curve: List[Dict[str, float]]
    train_index: np.ndarray
    val_index: np.ndarray


def split_by_episode(episode_ids: np.ndarray, val_fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Window indices for train / validation, no episode on both sides."""
    episodes = np.unique(episode_ids)
    if len(episodes) < 2:
        idx = np.arange(len(episode_ids))
        return idx, idx
    order = rng.permutation(episodes)
    n_val = min(max(1, int(math.ceil(val_fraction * len(episodes)))), len(episodes) - 1)
    val_eps = set(order[:n_val].tolist())
    is_val = np.array([e in val_eps for e in episode_ids.tolist()])
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def evaluate(model: DplModel, windows: np.ndarray, batch: int) -> Tuple[float, float]:
    """(reconstruction MSE, KL) over ``windows`` decoding the posterior mean."""
    if len(windows) == 0:
        return float("nan"), float("nan")
    mse_parts, kl_parts = [], []
    for start in range(0, len(windows), batch):
        chunk = Tensor(windows[start:start + batch])
        mu, log_std = model.encode_tensors(chunk)
        recon = model.decode_tensors(mu)
        n = chunk.shape[0]
        mse_parts.append(float(mse(recon, chunk).data) * n)
        kl_parts.append(float(kl_divergence(mu, log_std).data) * n)
    return math.fsum(mse_parts) / len(windows), math.fsum(kl_parts) / len(windows)


def train(
    windows: np.ndarray,
    episode_ids: np.ndarray,
    cfg: DplConfig,
    seed: int,
    curve_path: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
) -> DplTrainResult:
    """Unsupervised training with seeded shuffling; writes the loss-curve CSV and checkpoint if paths are given."""
    windows = np.asarray(windows, dtype=np.float32)
    if len(windows) == 0:
        raise TrainingError("DPL dataset is empty", component="dpl", operation="train")
    init_seq, split_seq, shuffle_seq, noise_seq = np.random.SeedSequence(seed).spawn(4)
    model = DplModel(cfg, np.random.default_rng(init_seq))
    train_idx, val_idx = split_by_episode(np.asarray(episode_ids), cfg.val_fraction, np.random.default_rng(split_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    optim = Adam(model.parameters(), lr=cfg.lr)

    logger.info(
        f"Training DPL on {len(train_idx)} windows ({len(val_idx)} validation), "
        f"{cfg.epochs} epochs, batch {cfg.batch}, kl_beta {cfg.kl_beta}"
    )
    curve: List[Dict[str, float]] = []
    writer = None
    f = open(curve_path, "w", newline="") if curve_path else None
    try:
        if f is not None:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOSS_COLUMNS)
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(train_idx)
            for b, start in enumerate(range(0, len(order), cfg.batch)):
                batch = Tensor(windows[order[start:start + cfg.batch]])
                mu, log_std = model.encode_tensors(batch)
                eps = noise_rng.standard_normal(mu.shape).astype(np.float32)
                z = mu + exp(log_std) * eps
                value = loss(batch, model.decode_tensors(z), mu, log_std, cfg.kl_beta)
                if not np.isfinite(value.data):
                    raise TrainingError(
                        f"non-finite DPL loss at epoch {epoch}, batch {b}",
                        component="dpl", operation="train", epoch=epoch, batch=b,
                    )
                value.backward()
                optim.step()
            train_mse, kl = evaluate(model, windows[train_idx], cfg.batch)
            val_mse, _ = evaluate(model, windows[val_idx], cfg.batch)
            row = {"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "kl": kl}
            curve.append(row)
            if writer is not None:
                writer.writerow([epoch, repr(train_mse), repr(val_mse), repr(kl)])
            log_with_context(logger, logging.INFO, f"DPL epoch {epoch}: train {train_mse:.6f} val {val_mse:.6f}",
                             epoch=epoch, train_mse=train_mse, val_mse=val_mse, kl=kl)
    finally:
        if f is not None:
            f.close()

    if checkpoint_path:
        ckpt.save_checkpoint(checkpoint_path, model)
    return DplTrainResult(model=model, curve=curve, train_index=train_idx, val_index=val_idx)


def load_model(path: str, cfg: DplConfig) -> DplModel:
    model = DplModel(cfg, np.random.default_rng(0))
    ckpt.load_into(model, path)
    return model.freeze()


# ---------------------------------------------------------------------------
# Latent probe
# ---------------------------------------------------------------------------

def probe_latents(
    model: DplModel,
    windows: np.ndarray,
    styles: Sequence[str],
    train_index: np.ndarray,
    test_index: np.ndarray,
    batch: int = 1024,
) -> Dict[str, object]:
    """Nearest-centroid style classification of posterior means on held-out windows."""
    styles = np.asarray(styles)
    mus = np.concatenate(
        [model.encode(windows[s:s + batch]).mu for s in range(0, len(windows), batch)], axis=0
    ) if len(windows) else np.zeros((0, model.latent_dim))
    labels = sorted(set(styles[train_index].tolist()))
    if not labels or len(test_index) == 0:
        return {"accuracy": None, "n_test": int(len(test_index)), "styles": labels, "per_style": {}}
    centroids = np.stack([mus[train_index][styles[train_index] == s].mean(axis=0) for s in labels])
    d = np.linalg.norm(mus[test_index][:, None, :] - centroids[None, :, :], axis=-1)
    predicted = np.asarray(labels)[np.argmin(d, axis=1)]
    truth = styles[test_index]
    per_style = {}
    for s in labels:
        sel = truth == s
        per_style[s] = {"n": int(sel.sum()), "accuracy": float((predicted[sel] == s).mean()) if sel.any() else None}
    return {
        "accuracy": float((predicted == truth).mean()),
        "n_test": int(len(test_index)),
        "styles": labels,
        "per_style": per_style,
        "centroids": {s: c.tolist() for s, c in zip(labels, centroids)},
    }
