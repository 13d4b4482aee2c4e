"""
Reproduction harness: HV-only trajectory datasets for the DPL, the prior
ablation and the coordination-tendency sweep.

Training runs are described by picklable `TrainingJob`s so sweeps and
ablations can fan out over a process pool (`experiment.workers > 1`).
"""
from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import dpl as dpl_mod
from . import ppo
from .config import RunConfig, build_run_config
from .env import IntersectionEnv
from .error_handler import CheckpointError, DataFormatError, error_context
from .logging_utils import log_with_context, setup_logger
from .utils import config_hash, file_sha256, write_csv, write_json
from .validation import iter_json_lines, require_keys, validate_phi, window_is_plausible

logger = setup_logger("socialav.experiments")

DATASET_FILE = "dataset.jsonl"
DATASET_MANIFEST = "dataset.manifest.json"
DATASET_STREAM = 2

SWEEP_COLUMNS = (
    "phi", "seed", "mean_return_global", "mean_return_E", "mean_return_C",
    "collision_rate", "success_rate", "mean_speed", "mean_min_pet",
)
ABLATION_COLUMNS = ("arm", "seed", "use_prior", "final_return_global", "final_return_E", "final_return_C", "mean_speed")
CURVE_COLUMNS = ("label", "seed", "phi", "update", "env_steps", "mean_return_global", "mean_return_E", "mean_return_C")


# ---------------------------------------------------------------------------
# DPL dataset
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    episodes: int
    seed: int
    steps: int
    file: str
    vehicles: int
    style_counts: Dict[str, int]
    intention_counts: Dict[str, int]
    config_hash: str
    file_sha256: str

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class DplDataset:
    windows: np.ndarray
    episode_ids: np.ndarray
    styles: List[str]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.windows)


def dataset_params(cfg: RunConfig, episodes: int, seed: int) -> Dict[str, Any]:
    """Everything that determines the dataset bytes."""
    return {
        "episodes": episodes,
        "seed": seed,
        "steps": cfg.experiment.dataset_steps,
        "layout": asdict(cfg.layout),
        "dynamics": asdict(cfg.dynamics),
        "drivers": asdict(cfg.drivers),
        "env": asdict(cfg.env),
    }


def simulate_hv_episode(cfg: RunConfig, episode_id: int, seed: int) -> Dict[str, Any]:
    """One HV-only episode as a dataset record."""
    env = IntersectionEnv(cfg, include_av=False)
    env.reset(ppo.episode_seed(seed, DATASET_STREAM, episode_id))
    with error_context("experiments", "simulate_hv_episode", episode=episode_id, seed=seed):
        for _ in range(cfg.experiment.dataset_steps - 1):
            if env.step_traffic() == 0:
                break
    vehicles = []
    for vid, track in env.all_tracks().items():
        desc = env.descriptions[vid]
        vehicles.append({
            "id": vid,
            "style": desc["style"],
            "intention": desc["movement"],
            "entry_arm": desc["entry_arm"],
            "states": [list(row) for row in track],
        })
    return {"episode_id": episode_id, "vehicles": vehicles}


def generate_dpl_dataset(episodes: int, seed: int, cfg: RunConfig, out_dir: str) -> DatasetManifest:
    """Simulate ``episodes`` HV-only worlds and write one JSON line per episode plus a manifest."""
    if episodes < 1:
        raise DataFormatError(f"dataset needs at least one episode, got {episodes}",
                              component="experiments", operation="generate_dpl_dataset")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, DATASET_FILE)
    styles: Counter = Counter()
    intentions: Counter = Counter()
    n_vehicles = 0
    with open(path, "w") as f:
        for i in range(episodes):
            record = simulate_hv_episode(cfg, i, seed)
            for v in record["vehicles"]:
                styles[v["style"]] += 1
                intentions[v["intention"]] += 1
            n_vehicles += len(record["vehicles"])
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            f.write("\n")
            if (i + 1) % 100 == 0:
                logger.info(f"Generated {i + 1}/{episodes} dataset episodes")

    manifest = DatasetManifest(
        episodes=episodes,
        seed=seed,
        steps=cfg.experiment.dataset_steps,
        file=DATASET_FILE,
        vehicles=n_vehicles,
        style_counts=dict(sorted(styles.items())),
        intention_counts=dict(sorted(intentions.items())),
        config_hash=config_hash(dataset_params(cfg, episodes, seed)),
        file_sha256=file_sha256(path),
    )
    write_json(os.path.join(out_dir, DATASET_MANIFEST), manifest.as_dict())
    log_with_context(logger, logging.INFO, f"Dataset written: {episodes} episodes, {n_vehicles} vehicles",
                     episodes=episodes, vehicles=n_vehicles, seed=seed)
    return manifest


def window_step_bound(cfg: RunConfig) -> float:
    """Largest plausible per-decision displacement in normalized units."""
    period = cfg.dynamics.dt * cfg.env.decision_substeps
    return cfg.layout.v_max * period * 1.5 / cfg.layout.arm_length


def load_dataset(path: str, cfg: RunConfig) -> DplDataset:
    """Cut every vehicle track into DPL windows; implausible windows are dropped with a warning."""
    window, stride = cfg.dpl.window, cfg.dpl.stride
    scale = cfg.layout.arm_length
    bound = window_step_bound(cfg)
    windows: List[np.ndarray] = []
    episode_ids: List[int] = []
    styles: List[str] = []
    dropped = 0
    for line_number, record in iter_json_lines(path):
        require_keys(record, ("episode_id", "vehicles"), line_number)
        for v in record["vehicles"]:
            require_keys(v, ("id", "style", "states"), line_number)
            states = np.asarray(v["states"], dtype=np.float64)
            if states.size == 0:
                continue
            if states.ndim != 2 or states.shape[1] != 5:
                raise DataFormatError(f"vehicle {v['id']}: states must be [t, x, y, vx, vy] rows",
                                      line_number=line_number, component="experiments", operation="load_dataset")
            positions = (states[:, 1:3] / scale).astype(np.float32)
            for w in dpl_mod.extract_windows(positions, window, stride):
                if not window_is_plausible(w, bound):
                    dropped += 1
                    continue
                windows.append(w)
                episode_ids.append(int(record["episode_id"]))
                styles.append(str(v["style"]))
    if dropped:
        logger.warning(f"Dropped {dropped} implausible windows from {path}")
    arr = np.stack(windows).astype(np.float32) if windows else np.zeros((0, window, 2), dtype=np.float32)
    return DplDataset(windows=arr, episode_ids=np.asarray(episode_ids, dtype=np.int64), styles=styles, dropped=dropped)


def train_dpl(dataset: DplDataset, cfg: RunConfig, seed: int, out_dir: str) -> dpl_mod.DplTrainResult:
    """Train the DPL on a loaded dataset; writes dpl_loss.csv and checkpoints/dpl.nnckpt."""
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    return dpl_mod.train(
        dataset.windows,
        dataset.episode_ids,
        cfg.dpl,
        seed,
        curve_path=os.path.join(out_dir, "dpl_loss.csv"),
        checkpoint_path=os.path.join(out_dir, "checkpoints", "dpl.nnckpt"),
    )


def probe_dataset(model: dpl_mod.DplModel, dataset: DplDataset, cfg: RunConfig, seed: int) -> Dict[str, Any]:
    """Style probe on the same episode split ``train_dpl`` used for this seed."""
    split_seq = np.random.SeedSequence(seed).spawn(4)[1]
    train_idx, test_idx = dpl_mod.split_by_episode(dataset.episode_ids, cfg.dpl.val_fraction, np.random.default_rng(split_seq))
    return dpl_mod.probe_latents(model, dataset.windows, dataset.styles, train_idx, test_idx, cfg.dpl.batch)


# ---------------------------------------------------------------------------
# Training jobs
# ---------------------------------------------------------------------------

@dataclass
class TrainingJob:
    """One PPO run plus its final evaluation. Plain data so it pickles into worker processes."""
    label: str
    seed: int
    config: Dict[str, Any]
    out_dir: str
    dpl_checkpoint: Optional[str] = None
    eval_episodes: int = 0

    @property
    def slug(self) -> str:
        return f"{self.label}_seed{self.seed}"


@dataclass
class JobResult:
    label: str
    seed: int
    phi: float
    use_prior: bool
    stats_path: str
    curve: List[Dict[str, Any]] = field(default_factory=list)
    evaluation: Dict[str, Any] = field(default_factory=dict)


def run_training_job(job: TrainingJob) -> JobResult:
    cfg = build_run_config(job.config)
    dpl = None
    if cfg.policy.use_prior:
        if not job.dpl_checkpoint or not os.path.exists(job.dpl_checkpoint):
            raise CheckpointError(
                f"prior arm {job.label!r} needs a trained DPL checkpoint (got {job.dpl_checkpoint!r})",
                component="experiments", operation="run_training_job",
            )
        dpl = dpl_mod.load_model(job.dpl_checkpoint, cfg.dpl)
    stats_path = os.path.join(job.out_dir, f"{job.slug}.csv")
    ckpt_dir = os.path.join(job.out_dir, "checkpoints", job.slug)
    os.makedirs(ckpt_dir, exist_ok=True)

    logger.info(f"Job {job.slug}: phi {cfg.social.phi:.4f}, prior {cfg.policy.use_prior}, {cfg.ppo.total_steps} steps")
    trained = ppo.train(cfg, job.seed, dpl=dpl, stats_path=stats_path, checkpoint_dir=ckpt_dir)
    evaluation = ppo.evaluate(trained.policy, dpl, cfg, job.eval_episodes, job.seed)
    evaluation.pop("results", None)
    return JobResult(
        label=job.label,
        seed=job.seed,
        phi=cfg.social.phi,
        use_prior=cfg.policy.use_prior,
        stats_path=stats_path,
        curve=trained.stats,
        evaluation=evaluation,
    )


def run_jobs(jobs: Sequence[TrainingJob], workers: int = 1) -> List[JobResult]:
    """Results come back in job order whatever the pool size."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_training_job(job) for job in jobs]
    logger.info(f"Running {len(jobs)} training jobs on {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run_training_job, jobs))


def _job_config(
    cfg: RunConfig, steps: int, phi: Optional[float] = None, use_prior: Optional[bool] = None
) -> Dict[str, Any]:
    data = cfg.to_dict()
    data["ppo"]["total_steps"] = steps
    if phi is not None:
        data["social"]["phi"] = phi
    if use_prior is not None:
        data["policy"]["use_prior"] = use_prior
    return data


def curve_rows(results: Sequence[JobResult]) -> List[Dict[str, Any]]:
    rows = []
    for r in results:
        for s in r.curve:
            rows.append({
                "label": r.label, "seed": r.seed, "phi": r.phi, "update": s["update"], "env_steps": s["env_steps"],
                "mean_return_global": s["mean_return_global"], "mean_return_E": s["mean_return_E"],
                "mean_return_C": s["mean_return_C"],
            })
    return rows


# ---------------------------------------------------------------------------
# Prior ablation
# ---------------------------------------------------------------------------

DEFAULT_ARMS = {"prior": True, "no_prior": False}


def run_prior_ablation(
    cfg: RunConfig,
    seeds: Sequence[int],
    out_dir: str,
    dpl_checkpoint: Optional[str] = None,
    arms: Optional[Mapping[str, bool]] = None,
) -> Dict[str, Any]:
    """Train every arm on matched seeds and compare final evaluation returns.

    ``arms`` maps an arm label to its ``use_prior`` flag; the difference reported
    is first arm minus second arm.
    """
    arms = dict(arms or DEFAULT_ARMS)
    labels = list(arms)
    jobs = [
        TrainingJob(
            label=label, seed=seed, config=_job_config(cfg, cfg.experiment.steps_per_run, use_prior=arms[label]), out_dir=out_dir,
            dpl_checkpoint=dpl_checkpoint, eval_episodes=cfg.experiment.eval_episodes,
        )
        for label in labels
        for seed in seeds
    ]
    results = run_jobs(jobs, cfg.experiment.workers)

    rows = []
    per_arm: Dict[str, List[float]] = {label: [] for label in labels}
    for r in results:
        ev = r.evaluation
        final = ev.get("mean_return_global") if not ev.get("empty") else None
        if final is not None:
            per_arm[r.label].append(final)
        rows.append({
            "arm": r.label, "seed": r.seed, "use_prior": r.use_prior, "final_return_global": final,
            "final_return_E": ev.get("mean_return_E"), "final_return_C": ev.get("mean_return_C"),
            "mean_speed": ev.get("mean_speed"),
        })
    write_csv(os.path.join(out_dir, "ablation.csv"), ABLATION_COLUMNS, rows)
    write_csv(os.path.join(out_dir, "curves.csv"), CURVE_COLUMNS, curve_rows(results))

    means = {label: (math.fsum(v) / len(v) if v else None) for label, v in per_arm.items()}
    difference = None
    if len(labels) >= 2 and means[labels[0]] is not None and means[labels[1]] is not None:
        difference = means[labels[0]] - means[labels[1]]
    summary = {"arms": arms, "seeds": list(seeds), "means": means, "difference": difference, "rows": rows}
    log_with_context(logger, logging.INFO, f"Ablation means {means}; difference {difference}",
                     means=means, difference=difference)
    return summary


# ---------------------------------------------------------------------------
# Coordination-tendency sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    phis: Sequence[float]
    seeds: Sequence[int]
    steps_per_run: int

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "SweepSpec":
        for phi in cfg.experiment.phis:
            validate_phi(phi)
        return cls(phis=tuple(cfg.experiment.phis), seeds=tuple(cfg.experiment.seeds),
                   steps_per_run=cfg.experiment.steps_per_run)


def run_ct_sweep(spec: SweepSpec, cfg: RunConfig, out_dir: str, dpl_checkpoint: Optional[str] = None) -> List[Dict[str, Any]]:
    """One training run per (phi, seed); returns the sweep table rows in (phi, seed) order."""
    jobs = [
        TrainingJob(
            label=f"phi{k}", seed=seed, config=_job_config(cfg, spec.steps_per_run, phi=float(phi)), out_dir=out_dir,
            dpl_checkpoint=dpl_checkpoint, eval_episodes=cfg.experiment.eval_episodes,
        )
        for k, phi in enumerate(spec.phis)
        for seed in spec.seeds
    ]
    results = run_jobs(jobs, cfg.experiment.workers)
    rows = []
    for r in results:
        ev = r.evaluation
        rows.append({
            "phi": r.phi,
            "seed": r.seed,
            "mean_return_global": ev.get("mean_return_global"),
            "mean_return_E": ev.get("mean_return_E"),
            "mean_return_C": ev.get("mean_return_C"),
            "collision_rate": ev.get("collision_rate"),
            "success_rate": ev.get("success_rate"),
            "mean_speed": ev.get("mean_speed"),
            "mean_min_pet": ev.get("mean_min_pet"),
        })
    write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows)
    write_csv(os.path.join(out_dir, "curves.csv"), CURVE_COLUMNS, curve_rows(results))
    logger.info(f"Sweep finished: {len(rows)} rows over {len(spec.phis)} phi values")
    return rows
