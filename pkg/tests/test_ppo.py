import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.config import PolicyConfig, PpoConfig, RunConfig
from socialav.error_handler import TrainingError
from socialav.nn import Adam, Tensor, log_softmax
from socialav.nn import mean as tmean
from socialav.policy import build_policy, forward
from socialav.ppo import (
    STATS_COLUMNS,
    RolloutState,
    clipped_surrogate,
    collect_rollouts,
    compute_advantages,
    episode_seed,
    evaluate,
    normalize_advantages,
    ppo_update,
    train,
)
from socialav.toy_env import ReachEnv

SMALL_POLICY = PolicyConfig(encoder_widths=[8, 8], att_dim=8, heads=2, att_out=6, decoder_widths=[8])


def _cfg(**ppo):
    base = dict(total_steps=120, forward_steps=10, buffer_cap=40, minibatch=16, update_epochs=2, checkpoint_every=2)
    base.update(ppo)
    return RunConfig().replace(policy=SMALL_POLICY, ppo=PpoConfig(**base))


def _collect(seed, cap=40):
    cfg = _cfg(buffer_cap=cap)
    policy = build_policy(cfg.policy, 0, seed)
    state = RolloutState(env=ReachEnv(), seed=seed)
    buf = collect_rollouts(state, policy, None, cfg.ppo, np.random.default_rng(seed))
    return policy, buf


def test_advantages_zero_rewards_and_values():
    adv, ret = compute_advantages([0.0] * 4, [0.0] * 4, [False, False, False, True], 0.0, 0.95, 0.95)
    assert np.all(adv == 0.0)
    assert np.all(ret == 0.0)


def test_single_step_episode():
    adv, ret = compute_advantages([1.0], [0.0], [True], 123.0, 0.7, 0.95)
    assert adv[0] == pytest.approx(1.0)
    assert ret[0] == pytest.approx(1.0)


def test_lambda_one_is_monte_carlo():
    rewards = [1.0, 0.0, 2.0, 0.0, 1.0]
    values = [0.5, 0.2, 0.1, 0.3, 0.4]
    gamma = 0.9
    adv, ret = compute_advantages(rewards, values, [False] * 4 + [True], 0.0, gamma, 1.0)
    g = 0.0
    expected = []
    for r in reversed(rewards):
        g = r + gamma * g
        expected.append(g)
    expected.reverse()
    assert expected[0] == pytest.approx(3.2761)
    assert np.allclose(ret, expected, atol=1e-12)
    assert np.allclose(adv, np.array(expected) - np.array(values), atol=1e-12)


def test_tail_bootstraps_from_last_value():
    adv, _ = compute_advantages([0.0], [0.0], [False], 2.0, 0.5, 0.95)
    assert adv[0] == pytest.approx(1.0)


def test_done_cuts_the_trace():
    # the second episode's reward must not leak into the first
    adv, _ = compute_advantages([0.0, 5.0], [0.0, 0.0], [True, True], 0.0, 0.9, 0.9)
    assert adv[0] == 0.0
    assert adv[1] == pytest.approx(5.0)


def test_normalized_advantages():
    adv = normalize_advantages(np.random.default_rng(0).normal(3.0, 7.0, size=500))
    assert abs(adv.mean()) < 1e-6
    assert abs(adv.std() - 1.0) < 1e-3


def test_normalize_constant_and_single():
    assert np.all(normalize_advantages(np.full(5, 2.0)) == 0.0)
    assert normalize_advantages(np.array([4.0]))[0] == 0.0


@pytest.mark.parametrize(
    "ratio,adv,expected",
    [(1.0, 0.7, 0.7), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (0.5, 1.0, 0.5), (1.5, -1.0, -1.5)],
)
def test_clipped_surrogate_examples(ratio, adv, expected):
    out = clipped_surrogate(Tensor(np.array([ratio])), Tensor(np.array([adv])), 0.2)
    assert float(out.data[0]) == pytest.approx(expected, abs=1e-6)


def test_clipped_never_exceeds_unclipped():
    rng = np.random.default_rng(4)
    ratio = rng.uniform(0.0, 3.0, size=2000)
    adv = rng.standard_normal(2000)
    out = clipped_surrogate(Tensor(ratio), Tensor(adv), 0.2).data
    assert np.all(out <= ratio * adv + 1e-5)


def test_episode_seed_streams_are_disjoint():
    train_seeds = {episode_seed(7, 0, i) for i in range(2000)}
    eval_seeds = {episode_seed(7, 1, i) for i in range(2000)}
    assert len(train_seeds) == 2000
    assert not train_seeds & eval_seeds
    assert episode_seed(7, 0, 3) == episode_seed(7, 0, 3)


def test_buffer_of_one():
    _, buf = _collect(0, cap=1)
    assert len(buf) == 1


def test_rollouts_are_reproducible():
    _, a = _collect(3)
    _, b = _collect(3)
    assert a.actions == b.actions
    assert a.logprobs == b.logprobs
    assert a.values == b.values
    assert [r.R_global for r in a.rewards] == [r.R_global for r in b.rewards]
    # 40 transitions of 20-step episodes
    assert sum(a.dones) == 2
    assert len(a.finished) == 2


def test_stored_logprobs_match_recomputation():
    policy, buf = _collect(5)
    for obs, priors, action, logprob, value in zip(buf.observations, buf.priors, buf.actions, buf.logprobs, buf.values):
        out = forward(policy, obs, priors)
        z = out.logits.astype(np.float64)
        z = z - z.max()
        lp = z - np.log(np.exp(z).sum())
        assert abs(lp[action] - logprob) < 1e-6
        assert abs(out.value - value) < 1e-6


def test_non_finite_loss_names_the_minibatch():
    policy, buf = _collect(1, cap=16)
    cfg = _cfg(minibatch=16, update_epochs=1).ppo
    adv = np.full(len(buf), np.nan)
    with pytest.raises(TrainingError) as exc:
        ppo_update(policy, Adam(policy.parameters(), lr=1e-3), buf.batch(), np.asarray(buf.actions),
                   np.asarray(buf.logprobs), adv, np.zeros(len(buf)), cfg, np.random.default_rng(0))
    assert "minibatch 0" in str(exc.value)


def test_zero_learning_rate_keeps_parameters():
    cfg = _cfg(lr=0.0)
    init_seq = np.random.SeedSequence(11).spawn(3)[0]
    reference = build_policy(cfg.policy, 0, int(init_seq.generate_state(1)[0]))
    result = train(cfg, 11, env_factory=ReachEnv)
    for (name, p), (_, q) in zip(result.policy.named_parameters(), reference.named_parameters()):
        assert np.array_equal(p.data, q.data), name


def test_train_writes_identical_stats(tmp_path):
    cfg = _cfg()
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        train(cfg, 2, env_factory=ReachEnv, stats_path=str(path))
    first, second = (p.read_bytes() for p in paths)
    assert first == second
    lines = first.decode().splitlines()
    assert lines[0] == ",".join(STATS_COLUMNS)
    assert len(lines) == 1 + 3


def test_train_stats_and_checkpoints(tmp_path):
    result = train(_cfg(), 0, env_factory=ReachEnv, checkpoint_dir=str(tmp_path))
    assert result.env_steps == 120
    assert [row["update"] for row in result.stats] == [1, 2, 3]
    for row in result.stats:
        assert 0.0 <= row["clip_frac"] <= 1.0
        assert 0.0 <= row["collision_rate"] <= 1.0
    assert sorted(os.listdir(tmp_path)) == ["policy_0002.nnckpt", "policy_final.nnckpt"]


def test_evaluate_zero_episodes():
    policy = build_policy(SMALL_POLICY, 0, 0)
    assert evaluate(policy, None, _cfg(), 0, 0, env_factory=ReachEnv) == {"episodes": 0, "empty": True}


def test_evaluate_is_reproducible():
    policy = build_policy(SMALL_POLICY, 0, 0)
    a = evaluate(policy, None, _cfg(), 5, 9, env_factory=ReachEnv)
    b = evaluate(policy, None, _cfg(), 5, 9, env_factory=ReachEnv)
    assert a == b
    assert a["episodes"] == 5
    assert a["success_rate"] + a["collision_rate"] + a["timeout_rate"] == pytest.approx(1.0)
    assert a["mean_min_pet"] is None


class _GradRecorder:
    """Optimizer stand-in: keeps each minibatch gradient, never moves parameters."""

    def __init__(self, params):
        self.params = list(params)
        self.grads = []

    def step(self):
        self.grads.append([np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in self.params])
        for p in self.params:
            p.zero_grad()


def test_unbounded_clip_gives_the_vanilla_policy_gradient():
    policy, buf = _collect(6, cap=24)
    cfg = _cfg(clip=1e9, minibatch=24, update_epochs=1, value_coef=0.0, entropy_coef=0.0).ppo
    actions = np.asarray(buf.actions)
    adv = np.random.default_rng(2).standard_normal(len(buf))
    recorder = _GradRecorder(policy.parameters())
    ppo_update(policy, recorder, buf.batch(), actions, np.asarray(buf.logprobs), adv,
               np.zeros(len(buf)), cfg, np.random.default_rng(0))
    (got,) = recorder.grads

    logits, _ = policy.forward_batch(buf.batch())
    logp = log_softmax(logits, axis=-1)[np.arange(len(buf)), actions]
    (-tmean(logp * Tensor(adv.astype(np.float32)))).backward()
    for p, g in zip(policy.parameters(), got):
        want = np.zeros_like(p.data) if p.grad is None else p.grad
        assert np.allclose(g, want, rtol=1e-4, atol=1e-7)
    assert any(np.any(g != 0.0) for g in got)
