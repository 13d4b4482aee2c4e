#!/usr/bin/env python3
"""
socialav CLI - data generation, DPL training, policy training, evaluation,
sweeps, replay export and verification
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import dpl as dpl_mod
from . import experiments, ppo, replay, report, verify
from .config import RunConfig, default_output_root, load_run_config
from .error_handler import CheckpointError, ConfigurationError, SocialAVError, handle_error
from .logging_utils import attach_run_log, console_silenced, setup_logger
from .policy import load_policy
from .utils import config_hash, ensure_run_dir, file_sha256, write_csv, write_json

logger = setup_logger("socialav.cli")

STOCHASTIC = ("gen-data", "train-dpl", "probe-latents", "train-policy", "eval", "sweep-ct", "ablate-prior")
EPISODE_COLUMNS = ("episode", "outcome", "steps", "return_E", "return_C", "return_global", "avg_speed", "min_pet")
MANIFEST_SKIP = ("run.log", "manifest.json")


# ---------------------------------------------------------------------------
# Run directory bookkeeping
# ---------------------------------------------------------------------------

def _run_dir(args: argparse.Namespace) -> Path:
    if args.out:
        return ensure_run_dir(args.out)
    name = args.command if getattr(args, "seed", None) is None else f"{args.command}-seed{args.seed}"
    return ensure_run_dir(os.path.join(default_output_root(), name))


def write_snapshot(run_dir: Path, cfg: RunConfig, args: argparse.Namespace) -> None:
    """config.json: the resolved config plus the command and seed that produced the run."""
    data = cfg.to_dict()
    data["_run"] = {"command": args.command, "seed": getattr(args, "seed", None)}
    write_json(run_dir / "config.json", data)


def write_manifest(run_dir: Path, cfg: RunConfig, args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> None:
    """manifest.json: sha256 of every artifact in the run directory."""
    files = {}
    for path in sorted(p for p in run_dir.rglob("*") if p.is_file()):
        rel = path.relative_to(run_dir).as_posix()
        if rel in MANIFEST_SKIP or rel.startswith("run.log"):
            continue
        files[rel] = file_sha256(path)
    manifest = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config_hash": config_hash(cfg.to_dict()),
        "files": files,
    }
    if extra:
        manifest.update(extra)
    write_json(run_dir / "manifest.json", manifest)


def _dpl_path(args: argparse.Namespace, cfg: RunConfig) -> Optional[str]:
    return getattr(args, "dpl", None) or cfg.policy.dpl_checkpoint or None


def _load_dpl(args: argparse.Namespace, cfg: RunConfig) -> Optional[dpl_mod.DplModel]:
    if not cfg.policy.use_prior:
        return None
    path = _dpl_path(args, cfg)
    if not path:
        raise ConfigurationError(
            "policy.use_prior is set but no DPL checkpoint was given (--dpl or policy.dpl_checkpoint)",
            component="cli", operation="load_dpl",
        )
    if not os.path.exists(path):
        raise CheckpointError(f"DPL checkpoint not found: {path}", component="cli", operation="load_dpl")
    return dpl_mod.load_model(path, cfg.dpl)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    episodes = args.episodes or cfg.experiment.dataset_episodes
    manifest = experiments.generate_dpl_dataset(episodes, args.seed, cfg, str(run_dir))
    rows = [{"category": "style", "name": k, "count": v} for k, v in manifest.style_counts.items()]
    rows += [{"category": "intention", "name": k, "count": v} for k, v in manifest.intention_counts.items()]
    write_csv(run_dir / "metrics.csv", ("category", "name", "count"), rows)
    return {"dataset": manifest.as_dict()}


def cmd_train_dpl(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    dataset = experiments.load_dataset(args.dataset, cfg)
    result = experiments.train_dpl(dataset, cfg, args.seed, str(run_dir))
    write_csv(run_dir / "metrics.csv", dpl_mod.LOSS_COLUMNS, result.curve)
    return {"windows": len(dataset), "dropped_windows": dataset.dropped}


def cmd_probe_latents(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    dataset = experiments.load_dataset(args.dataset, cfg)
    model = dpl_mod.load_model(args.dpl, cfg.dpl)
    probe = experiments.probe_dataset(model, dataset, cfg, args.seed)
    write_json(run_dir / "probe.json", probe)
    rows = [{"style": s, "n": v["n"], "accuracy": v["accuracy"]} for s, v in probe["per_style"].items()]
    rows.append({"style": "all", "n": probe["n_test"], "accuracy": probe["accuracy"]})
    write_csv(run_dir / "metrics.csv", ("style", "n", "accuracy"), rows)
    print(f"probe accuracy: {probe['accuracy']}")
    return {"accuracy": probe["accuracy"]}


def cmd_train_policy(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    dpl = _load_dpl(args, cfg)
    result = ppo.train(
        cfg, args.seed, dpl=dpl,
        stats_path=str(run_dir / "metrics.csv"),
        checkpoint_dir=str(run_dir / "checkpoints"),
    )
    return {"env_steps": result.env_steps, "updates": len(result.stats), "prior_dim": result.policy.prior_dim}


def cmd_eval(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    dpl = _load_dpl(args, cfg)
    policy = load_policy(args.policy, cfg.policy, dpl.latent_dim if dpl is not None else 0)
    episodes = cfg.experiment.eval_episodes if args.episodes is None else args.episodes
    record_dir = None
    if args.record:
        record_dir = run_dir / "episodes"
        record_dir.mkdir(exist_ok=True)
    summary = ppo.evaluate(policy, dpl, cfg, episodes, args.seed, record_dir=str(record_dir) if record_dir else None)
    results = summary.pop("results", [])
    rows = [{"episode": i, **r} for i, r in enumerate(results)]
    for row in rows:
        row.pop("speed_profile", None)
    write_csv(run_dir / "metrics.csv", EPISODE_COLUMNS, rows)
    write_json(run_dir / "evaluation.json", {**summary, "speed_profiles": [r["speed_profile"] for r in results]})
    print(json.dumps(summary, sort_keys=True))
    return {"episodes": summary["episodes"]}


def _seeds(args: argparse.Namespace, cfg: RunConfig) -> List[int]:
    """Configured experiment seeds are offsets from --seed."""
    return [args.seed + s for s in cfg.experiment.seeds]


def cmd_sweep_ct(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    spec = experiments.SweepSpec.from_config(cfg)
    spec = experiments.SweepSpec(phis=spec.phis, seeds=tuple(_seeds(args, cfg)), steps_per_run=spec.steps_per_run)
    needs_prior = cfg.policy.use_prior
    rows = experiments.run_ct_sweep(spec, cfg, str(run_dir), _dpl_path(args, cfg) if needs_prior else None)
    write_csv(run_dir / "metrics.csv", experiments.SWEEP_COLUMNS, rows)
    report.emit_report(str(run_dir), smoothing=cfg.experiment.smoothing_window)
    return {"rows": len(rows)}


def cmd_ablate_prior(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    summary = experiments.run_prior_ablation(cfg, _seeds(args, cfg), str(run_dir), dpl_checkpoint=_dpl_path(args, cfg))
    write_csv(run_dir / "metrics.csv", experiments.ABLATION_COLUMNS, summary["rows"])
    write_json(run_dir / "ablation.json", {k: v for k, v in summary.items() if k != "rows"})
    report.emit_report(str(run_dir), smoothing=cfg.experiment.smoothing_window)
    print(json.dumps({"means": summary["means"], "difference": summary["difference"]}, sort_keys=True))
    return {"difference": summary["difference"]}


def _replay_config(args: argparse.Namespace) -> RunConfig:
    """--config wins; otherwise the snapshot of the eval run that recorded the log."""
    if args.config:
        return load_run_config(args.config, args.set)
    log_dir = Path(args.log).resolve().parent
    for candidate in (log_dir / "config.json", log_dir.parent / "config.json"):
        if candidate.exists():
            return load_run_config(str(candidate), args.set)
    return load_run_config(None, args.set)


def cmd_replay(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    name = Path(args.log).name.replace(".log.csv", "") + ".replay.jsonl"
    count = replay.write_replay(replay.replay_episode(args.log, cfg, args.meta), str(run_dir / name))
    return {"decision_steps": count}


def cmd_grad_check(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    results = verify.run_grad_checks(seed=args.seed or 0)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<14} max relative error {r.max_relative_error:.3e}  tolerance {r.tolerance:.0e}  {status}")
    write_csv(
        run_dir / "metrics.csv", ("layer", "max_relative_error", "tolerance", "passed"),
        [{"layer": r.name, "max_relative_error": r.max_relative_error, "tolerance": r.tolerance, "passed": r.passed} for r in results],
    )
    return {"passed": all(r.passed for r in results)}


def cmd_report(args: argparse.Namespace, cfg: RunConfig, run_dir: Path) -> Dict[str, Any]:
    smoothing = cfg.experiment.smoothing_window if args.smoothing is None else args.smoothing
    written = report.emit_report(args.run, out_dir=str(run_dir / "report"), smoothing=smoothing)
    return {"report": written}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-dpl": cmd_train_dpl,
    "probe-latents": cmd_probe_latents,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "sweep-ct": cmd_sweep_ct,
    "ablate-prior": cmd_ablate_prior,
    "replay": cmd_replay,
    "grad-check": cmd_grad_check,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="socialav",
        description="socialav - socially coordinated AV driving at unsignalized intersections",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  socialav gen-data --seed 7 --out runs/data
  socialav train-dpl --seed 7 --dataset runs/data/dataset.jsonl --out runs/dpl
  socialav train-policy --seed 0 --dpl runs/dpl/checkpoints/dpl.nnckpt
  socialav sweep-ct --seed 0 --dpl runs/dpl/checkpoints/dpl.nnckpt --set experiment.phis=[0,0.2618]
  socialav grad-check
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="Run config file (YAML or JSON)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="Config override")
        p.add_argument("--out", default=None, help="Run directory (default under $SOCIALAV_OUTPUT_ROOT)")
        if name in STOCHASTIC:
            p.add_argument("--seed", type=int, required=True, help="Master seed")
        else:
            p.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
        return p

    p = add("gen-data", "Generate the HV-only DPL trajectory dataset")
    p.add_argument("--episodes", type=int, default=None, help="Override experiment.dataset_episodes")

    p = add("train-dpl", "Train the driving-prior VAE")
    p.add_argument("--dataset", required=True, help="dataset.jsonl from gen-data")

    p = add("probe-latents", "Nearest-centroid style probe of DPL latents")
    p.add_argument("--dataset", required=True)
    p.add_argument("--dpl", required=True, help="DPL checkpoint")

    p = add("train-policy", "Train the attention PPO policy")
    p.add_argument("--dpl", default=None, help="DPL checkpoint (needed when policy.use_prior)")

    p = add("eval", "Greedy evaluation of a trained policy")
    p.add_argument("--policy", required=True, help="Policy checkpoint")
    p.add_argument("--dpl", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--record", action="store_true", help="Write per-episode substep logs for replay")

    p = add("sweep-ct", "Coordination-tendency sweep over experiment.phis")
    p.add_argument("--dpl", default=None)

    p = add("ablate-prior", "Train with and without driving priors on matched seeds")
    p.add_argument("--dpl", default=None)

    p = add("replay", "Re-derive observations and rewards from a recorded episode")
    p.add_argument("log", help="episode_XXXX.log.csv from eval --record")
    p.add_argument("--meta", default=None, help="Metadata sidecar (default next to the log)")

    add("grad-check", "Finite-difference gradient suite")

    p = add("report", "Render SVG charts from a run directory")
    p.add_argument("--run", required=True, help="Run directory holding the CSVs")
    p.add_argument("--smoothing", type=int, default=None, help="Trailing moving-average window")
    return parser


def _error_line(error: BaseException, exit_code: int) -> str:
    payload = {
        "error": error.__class__.__name__,
        "message": str(error),
        "exit_code": exit_code,
    }
    if isinstance(error, SocialAVError):
        payload["component"] = error.component
        payload["operation"] = error.operation
    return json.dumps(payload, sort_keys=True, default=str)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point"""
    args = build_parser().parse_args(argv)
    if args.command == "report" and not args.out:
        args.out = args.run

    try:
        cfg = _replay_config(args) if args.command == "replay" else load_run_config(args.config, args.set)
        run_dir = _run_dir(args)
        attach_run_log(str(run_dir), level=getattr(logging, cfg.logging.level.upper()), structured=cfg.logging.structured)
        # report into an existing run leaves its snapshot and manifest alone
        bookkeeping = not (args.command == "report" and Path(args.out).resolve() == Path(args.run).resolve())
        if bookkeeping:
            write_snapshot(run_dir, cfg, args)
        logger.info(f"{args.command}: run directory {run_dir}")
        extra = COMMANDS[args.command](args, cfg, run_dir)
        if bookkeeping:
            write_manifest(run_dir, cfg, args, extra)
        if args.command == "grad-check" and not extra["passed"]:
            return 1
        return 0
    except SocialAVError as e:
        # stderr carries only the JSON error line; run.log keeps the full record
        with console_silenced():
            handle_error(e, "cli", args.command)
        print(_error_line(e, e.exit_code), file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print(_error_line(KeyboardInterrupt("interrupted"), 1), file=sys.stderr)
        return 1
    except Exception as e:
        with console_silenced():
            handle_error(e, "cli", args.command)
        print(_error_line(e, 1), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
