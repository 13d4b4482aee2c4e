"""
Desk-scale acceptance runs. They take minutes each; run with ``pytest -m slow``.
"""
import dataclasses
import math
import os
import sys

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.config import PpoConfig, RunConfig
from socialav.experiments import (
    DATASET_FILE,
    SweepSpec,
    generate_dpl_dataset,
    load_dataset,
    probe_dataset,
    run_ct_sweep,
    run_prior_ablation,
    train_dpl,
)
from socialav.ppo import train
from socialav.report import smooth
from socialav.toy_env import ReachEnv

pytestmark = pytest.mark.slow

SEEDS = [0, 1, 2]


def _workers():
    return max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="module")
def desk_dpl(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_dpl")
    cfg = RunConfig()
    generate_dpl_dataset(cfg.experiment.dataset_episodes, 0, cfg, str(out))
    dataset = load_dataset(str(out / DATASET_FILE), cfg)
    result = train_dpl(dataset, cfg, 0, str(out))
    return cfg, dataset, result, str(out / "checkpoints" / "dpl.nnckpt")


def test_dpl_converges_and_separates_styles(desk_dpl):
    cfg, dataset, result, _ = desk_dpl
    assert len(result.curve) == cfg.dpl.epochs
    assert result.curve[-1]["val_mse"] < 0.2 * result.curve[0]["val_mse"]
    averaged = smooth([row["train_mse"] for row in result.curve], 10)[9:]
    assert all(later <= earlier for earlier, later in zip(averaged, averaged[1:]))
    probe = probe_dataset(result.model, dataset, cfg, 0)
    assert len(probe["styles"]) == 3
    assert probe["accuracy"] > 0.7


def test_ppo_learns_the_reach_task():
    cfg = RunConfig().replace(ppo=PpoConfig(total_steps=20000, lr=1e-3))
    result = train(cfg, 0, env_factory=ReachEnv)
    returns = [row["mean_return_global"] for row in result.stats]
    k = max(1, len(returns) // 5)
    first = math.fsum(returns[:k]) / k
    last = math.fsum(returns[-k:]) / k
    assert last >= 1.5 * first
    assert last > first


def test_priors_do_not_hurt(desk_dpl, tmp_path):
    cfg, _, _, checkpoint = desk_dpl
    cfg = cfg.replace(experiment=dataclasses.replace(cfg.experiment, workers=_workers()))
    summary = run_prior_ablation(cfg, SEEDS, str(tmp_path), checkpoint)
    assert summary["difference"] is not None
    assert summary["means"]["prior"] >= summary["means"]["no_prior"]


def test_coordination_slows_the_av(desk_dpl, tmp_path):
    cfg, _, _, checkpoint = desk_dpl
    phis = [0.0, math.pi / 12, 5 * math.pi / 12]
    cfg = cfg.replace(experiment=dataclasses.replace(cfg.experiment, phis=phis, seeds=SEEDS, workers=_workers()))
    rows = run_ct_sweep(SweepSpec.from_config(cfg), cfg, str(tmp_path), checkpoint)

    def mean_of(phi, column):
        values = [r[column] for r in rows if r["phi"] == phi]
        return math.fsum(values) / len(values)

    assert mean_of(5 * math.pi / 12, "mean_speed") < mean_of(0.0, "mean_speed")
    assert mean_of(math.pi / 12, "collision_rate") <= mean_of(0.0, "collision_rate")
