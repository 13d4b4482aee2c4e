"""
PPO-Clip training: rollout collection with driving priors, GAE advantages,
clipped-surrogate updates, periodic checkpoints and greedy evaluation.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import PpoConfig, RunConfig
from .dpl import DplModel
from .env import EpisodeResult, IntersectionEnv, Observation, Outcome, RewardBreakdown
from .error_handler import TrainingError, error_context
from .logging_utils import log_with_context, setup_logger
from .nn import Adam, Tensor, clip, exp, log_softmax, minimum, mse, softmax, tsum
from .nn import checkpoint as ckpt
from .nn import mean as tmean
from .policy import PolicyBatch, PolicyNet, act, build_policy, forward, make_batch, prior_vectors, priors_for

logger = setup_logger("socialav.ppo")

STATS_COLUMNS = (
    "update", "env_steps", "mean_return_E", "mean_return_C", "mean_return_global",
    "policy_loss", "value_loss", "entropy", "clip_frac", "collision_rate", "success_rate", "phi", "seed",
)

EnvFactory = Callable[[], Any]


def episode_seed(seed: int, stream: int, index: int) -> int:
    """Disjoint per-episode seeds: training (stream 0) and evaluation (stream 1) never overlap."""
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


@dataclass
class RolloutBuffer:
    capacity: int
    observations: List[Observation] = field(default_factory=list)
    priors: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    logprobs: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    rewards: List[RewardBreakdown] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    last_value: float = 0.0
    finished: List[EpisodeResult] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, obs: Observation, priors: np.ndarray, action: int, logprob: float, value: float,
            reward: RewardBreakdown, done: bool) -> None:
        self.observations.append(obs)
        self.priors.append(priors)
        self.actions.append(action)
        self.logprobs.append(logprob)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def batch(self) -> PolicyBatch:
        return make_batch(self.observations, self.priors)

    def clear(self) -> None:
        for name in ("observations", "priors", "actions", "logprobs", "values", "rewards", "dones", "finished"):
            getattr(self, name).clear()
        self.last_value = 0.0


@dataclass
class RolloutState:
    """Episode in progress, carried across collection rounds."""
    env: Any
    seed: int
    episode: int = 0
    obs: Optional[Observation] = None
    partial: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def start_episode(self) -> None:
        self.obs = self.env.reset(episode_seed(self.seed, 0, self.episode))
        self.partial = [0.0, 0.0, 0.0]
        self.episode += 1


def current_priors(env: Any, obs: Observation, dpl: Optional[DplModel]) -> np.ndarray:
    if dpl is None:
        return priors_for(obs, {}, 0)
    ids = [vid for vid, present in zip(obs.neighbor_ids, obs.mask) if present]
    return priors_for(obs, prior_vectors(dpl, env.histories(), ids), dpl.latent_dim)


def collect_rollouts(
    state: RolloutState,
    policy: PolicyNet,
    dpl: Optional[DplModel],
    cfg: PpoConfig,
    rng: np.random.Generator,
    buffer: Optional[RolloutBuffer] = None,
) -> RolloutBuffer:
    """Fill a buffer with ``buffer_cap`` transitions; stored reward is R_global."""
    buffer = buffer or RolloutBuffer(cfg.buffer_cap)
    buffer.clear()
    while not buffer.full:
        for _ in range(cfg.forward_steps):
            if buffer.full:
                break
            if state.obs is None:
                state.start_episode()
            with error_context("ppo", "collect_rollouts", episode=state.episode - 1, seed=state.seed):
                obs = state.obs
                priors = current_priors(state.env, obs, dpl)
                out = forward(policy, obs, priors)
                action, logprob = act(out, "sample", rng)
                next_obs, reward, done, _ = state.env.step(int(action))
            buffer.add(obs, priors, int(action), logprob, out.value, reward, done)
            state.partial[0] += reward.R_E
            state.partial[1] += reward.R_C
            state.partial[2] += reward.R_global
            if done:
                buffer.finished.append(state.env.result())
                state.obs = None
            else:
                state.obs = next_obs
    if state.obs is not None:
        buffer.last_value = forward(policy, state.obs, current_priors(state.env, state.obs, dpl)).value
    return buffer


def compute_advantages(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    last_value: float,
    gamma: float,
    gae_lambda: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """GAE advantages and returns-to-go; episodes cut by ``dones``, the tail bootstraps from ``last_value``."""
    n = len(rewards)
    adv = np.zeros(n, dtype=np.float64)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value, carry = 0.0, 0.0
        else:
            next_value = last_value if t == n - 1 else values[t + 1]
            carry = 1.0
        delta = rewards[t] + gamma * next_value * carry - values[t]
        gae = delta + gamma * gae_lambda * carry * gae
        adv[t] = gae
    returns = adv + np.asarray(values, dtype=np.float64)
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean() if len(adv) else adv
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8) if std > 0 else adv - adv.mean()


def clipped_surrogate(ratio: Tensor, adv: Tensor, clip_eps: float) -> Tensor:
    """Per-sample min(r * A, clip(r, 1 - eps, 1 + eps) * A)."""
    return minimum(ratio * adv, clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float


def ppo_update(
    policy: PolicyNet,
    optim: Adam,
    batch: PolicyBatch,
    actions: np.ndarray,
    old_logprobs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """update_epochs passes of shuffled minibatches, one Adam step each."""
    n = len(actions)
    sums = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_frac": []}
    weights: List[int] = []
    minibatch_index = 0
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            logits, values = policy.forward_batch(batch.take(idx))
            logp_all = log_softmax(logits, axis=-1)
            logp = logp_all[np.arange(len(idx)), actions[idx]]
            ratio = exp(logp - Tensor(old_logprobs[idx].astype(np.float32)))
            adv = Tensor(advantages[idx].astype(np.float32))
            policy_loss = -tmean(clipped_surrogate(ratio, adv, cfg.clip))
            value_loss = mse(values, Tensor(returns[idx].astype(np.float32)))
            entropy = -tmean(tsum(softmax(logits, axis=-1) * logp_all, axis=-1))
            total = policy_loss + value_loss * cfg.value_coef - entropy * cfg.entropy_coef
            if not np.isfinite(total.data):
                raise TrainingError(
                    f"non-finite PPO loss in minibatch {minibatch_index}",
                    component="ppo", operation="ppo_update", minibatch=minibatch_index,
                )
            total.backward()
            optim.step()
            sums["policy_loss"].append(float(policy_loss.data) * len(idx))
            sums["value_loss"].append(float(value_loss.data) * len(idx))
            sums["entropy"].append(float(entropy.data) * len(idx))
            sums["clip_frac"].append(float(np.sum(np.abs(ratio.data - 1.0) > cfg.clip)))
            weights.append(len(idx))
            minibatch_index += 1
    total_n = sum(weights)
    return UpdateStats(**{k: math.fsum(v) / total_n for k, v in sums.items()})


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: PolicyNet
    stats: List[Dict[str, Any]]
    env_steps: int


def _episode_means(buffer: RolloutBuffer, state: RolloutState) -> Tuple[float, float, float, float, float]:
    done = buffer.finished
    if not done:
        return state.partial[0], state.partial[1], state.partial[2], 0.0, 0.0
    n = len(done)
    return (
        math.fsum(r.return_E for r in done) / n,
        math.fsum(r.return_C for r in done) / n,
        math.fsum(r.return_global for r in done) / n,
        sum(r.outcome == Outcome.COLLIDED for r in done) / n,
        sum(r.outcome == Outcome.ARRIVED for r in done) / n,
    )


def train(
    cfg: RunConfig,
    seed: int,
    dpl: Optional[DplModel] = None,
    env_factory: Optional[EnvFactory] = None,
    stats_path: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
) -> TrainResult:
    """Alternate collection and updates until ``ppo.total_steps`` environment steps."""
    p = cfg.ppo
    init_seq, act_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(3)
    prior_dim = dpl.latent_dim if dpl is not None else 0
    policy = build_policy(cfg.policy, prior_dim, int(init_seq.generate_state(1)[0]))
    optim = Adam(policy.parameters(), lr=p.lr)
    act_rng = np.random.default_rng(act_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    env = env_factory() if env_factory else IntersectionEnv(cfg)
    state = RolloutState(env=env, seed=seed)
    buffer = RolloutBuffer(p.buffer_cap)

    log_with_context(
        logger, logging.INFO,
        f"PPO start: {p.total_steps} steps, {policy.num_parameters()} parameters, "
        f"prior_dim {prior_dim}, phi {cfg.social.phi:.4f}; "
        f"target_update_rate {p.target_update_rate} is recorded but has no role in PPO-Clip",
        seed=seed, phi=cfg.social.phi, target_update_rate=p.target_update_rate,
    )

    stats: List[Dict[str, Any]] = []
    f = open(stats_path, "w", newline="") if stats_path else None
    writer = csv.writer(f, lineterminator="\n") if f else None
    if writer:
        writer.writerow(STATS_COLUMNS)
    env_steps = 0
    update = 0
    try:
        while env_steps < p.total_steps:
            collect_rollouts(state, policy, dpl, p, act_rng, buffer)
            env_steps += len(buffer)
            update += 1
            rewards = [r.R_global for r in buffer.rewards]
            adv, returns = compute_advantages(rewards, buffer.values, buffer.dones, buffer.last_value, p.gamma, p.gae_lambda)
            upd = ppo_update(
                policy, optim, buffer.batch(), np.asarray(buffer.actions), np.asarray(buffer.logprobs),
                normalize_advantages(adv), returns, p, shuffle_rng,
            )
            ret_e, ret_c, ret_g, coll, succ = _episode_means(buffer, state)
            row = {
                "update": update, "env_steps": env_steps,
                "mean_return_E": ret_e, "mean_return_C": ret_c, "mean_return_global": ret_g,
                "policy_loss": upd.policy_loss, "value_loss": upd.value_loss, "entropy": upd.entropy,
                "clip_frac": upd.clip_frac, "collision_rate": coll, "success_rate": succ,
                "phi": cfg.social.phi, "seed": seed,
            }
            stats.append(row)
            if writer:
                writer.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in STATS_COLUMNS])
            log_with_context(logger, logging.INFO,
                             f"update {update}: env_steps {env_steps} return {ret_g:.3f} clip {upd.clip_frac:.3f}",
                             update=update, env_steps=env_steps, seed=seed)
            if checkpoint_dir and update % p.checkpoint_every == 0:
                ckpt.save_checkpoint(os.path.join(checkpoint_dir, f"policy_{update:04d}.nnckpt"), policy)
    finally:
        if f:
            f.close()
    if checkpoint_dir:
        ckpt.save_checkpoint(os.path.join(checkpoint_dir, "policy_final.nnckpt"), policy)
    return TrainResult(policy=policy, stats=stats, env_steps=env_steps)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(
    policy: PolicyNet,
    dpl: Optional[DplModel],
    cfg: RunConfig,
    episodes: int,
    seed: int,
    env_factory: Optional[EnvFactory] = None,
    record_dir: Optional[str] = None,
) -> Dict[str, Any]:
    """Greedy-policy statistics over ``episodes`` episodes."""
    if episodes <= 0:
        return {"episodes": 0, "empty": True}
    env = env_factory() if env_factory else IntersectionEnv(cfg)
    results: List[EpisodeResult] = []
    for i in range(episodes):
        obs = env.reset(episode_seed(seed, 1, i))
        done = False
        with error_context("ppo", "evaluate", episode=i, seed=seed):
            while not done:
                out = forward(policy, obs, current_priors(env, obs, dpl))
                action, _ = act(out, "greedy")
                obs, _, done, _ = env.step(int(action))
        results.append(env.result())
        if record_dir and isinstance(env, IntersectionEnv):
            env.write_log(os.path.join(record_dir, f"episode_{i:04d}.log.csv"))
            with open(os.path.join(record_dir, f"episode_{i:04d}.meta.json"), "w") as f:
                json.dump(env.episode_meta(), f, sort_keys=True, indent=2)
                f.write("\n")
    return summarize(results)


def summarize(results: Sequence[EpisodeResult]) -> Dict[str, Any]:
    n = len(results)
    if n == 0:
        return {"episodes": 0, "empty": True}
    pets = [r.min_pet for r in results if r.min_pet is not None]
    return {
        "episodes": n,
        "empty": False,
        "mean_return_E": math.fsum(r.return_E for r in results) / n,
        "mean_return_C": math.fsum(r.return_C for r in results) / n,
        "mean_return_global": math.fsum(r.return_global for r in results) / n,
        "success_rate": sum(r.outcome == Outcome.ARRIVED for r in results) / n,
        "collision_rate": sum(r.outcome == Outcome.COLLIDED for r in results) / n,
        "timeout_rate": sum(r.outcome == Outcome.TIMEOUT for r in results) / n,
        "mean_speed": math.fsum(r.avg_speed for r in results) / n,
        "mean_min_pet": math.fsum(pets) / len(pets) if pets else None,
        "results": [r.as_dict() for r in results],
    }
