"""
Replay of recorded evaluation episodes.

Reads the substep log written by ``eval --record`` plus its metadata sidecar and
re-derives, for every decision step, the AV observation and the full reward
breakdown from the logged states alone. The logged rewards are carried next to
the recomputed ones so audits can compare them.
"""
from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from typing import Any, Dict, Iterator, List, Optional

from .config import RunConfig
from .env import (
    AV_ID,
    LOG_COLUMNS,
    AvStatus,
    Outcome,
    RewardBreakdown,
    coordination_reward,
    coordination_terms,
    ego_reward,
    global_reward,
    observe,
)
from .dynamics import VehicleState
from .error_handler import DataFormatError
from .layout import IntersectionLayout
from .logging_utils import setup_logger
from .utils import read_json
from .validation import parse_float, read_csv_rows, require_keys

logger = setup_logger("socialav.replay")

META_KEYS = ("dt", "decision_substeps", "phi", "vehicles", "actions", "rewards", "outcome")


def meta_path_for(log_path: str) -> str:
    """episode_0003.log.csv -> episode_0003.meta.json"""
    base = log_path[:-len(".log.csv")] if log_path.endswith(".log.csv") else os.path.splitext(log_path)[0]
    return base + ".meta.json"


def read_substeps(log_path: str, dt: float) -> Dict[int, Dict[int, VehicleState]]:
    """Logged states keyed by substep index then vehicle id."""
    _, rows = read_csv_rows(log_path, LOG_COLUMNS)
    frames: Dict[int, Dict[int, VehicleState]] = defaultdict(dict)
    for line_number, row in enumerate(rows, start=2):
        t = parse_float(row["t"], line_number, "t")
        index = int(round(t / dt))
        if not math.isclose(index * dt, t, rel_tol=0.0, abs_tol=1e-6):
            raise DataFormatError(f"t={t!r} is not a multiple of dt={dt!r}", line_number=line_number,
                                  component="replay", operation="read_substeps")
        try:
            vid = int(row["vehicle_id"])
        except ValueError:
            raise DataFormatError(f"vehicle_id {row['vehicle_id']!r} is not an integer", line_number=line_number,
                                  component="replay", operation="read_substeps")
        frames[index][vid] = VehicleState(
            parse_float(row["x"], line_number, "x"),
            parse_float(row["y"], line_number, "y"),
            parse_float(row["heading"], line_number, "heading"),
            parse_float(row["speed"], line_number, "speed"),
        )
    return dict(frames)


def _recompute(
    before: AvStatus, after: AvStatus, action: int, states: Dict[int, VehicleState], v0: Dict[int, float], cfg: RunConfig, phi: float
) -> RewardBreakdown:
    r_c, r_e, r_a, R_E = ego_reward(before, after, action, cfg.env, cfg.social, cfg.layout.v_max)
    hvs = [(st, v0[vid]) for vid, st in sorted(states.items()) if vid != AV_ID]
    terms = coordination_terms(states[AV_ID], hvs, cfg.env.perception_radius, cfg.drivers.conflict_radius)
    R_C = coordination_reward(terms, cfg.social, cfg.env.ttc_threshold)
    return RewardBreakdown(r_c, r_e, r_a, R_E, R_C, global_reward(R_E, R_C, phi))


def replay_episode(log_path: str, cfg: RunConfig, meta_path: Optional[str] = None) -> Iterator[Dict[str, Any]]:
    """Yield one record per decision step: observation, action, logged and recomputed rewards."""
    if os.path.getsize(log_path) == 0:
        return
    with open(log_path, "r") as f:
        if sum(1 for line in f if line.strip()) <= 1:
            return

    meta_path = meta_path or meta_path_for(log_path)
    meta = read_json(meta_path)
    require_keys(meta, META_KEYS, 1)
    dt = float(meta["dt"])
    substeps = int(meta["decision_substeps"])
    phi = float(meta["phi"])
    v0 = {int(v["id"]): float(v["v0"]) for v in meta["vehicles"]}
    actions: List[int] = [int(a) for a in meta["actions"]]
    logged: List[Dict[str, float]] = meta["rewards"]
    outcome = meta["outcome"]

    frames = read_substeps(log_path, dt)
    last = max(frames)
    layout = IntersectionLayout.from_config(cfg.layout)
    status = AvStatus(frames[0][AV_ID].speed, False, False) if AV_ID in frames.get(0, {}) else None
    if status is None:
        raise DataFormatError("log has no AV row at t=0", line_number=2, component="replay", operation="replay_episode")

    n = len(actions)
    for k in range(1, n + 1):
        start = (k - 1) * substeps
        end = last if k == n else k * substeps
        if start not in frames or end not in frames or AV_ID not in frames[end]:
            raise DataFormatError(f"log is missing substeps for decision step {k}", line_number=None,
                                  component="replay", operation="replay_episode")
        obs = observe(frames[start], AV_ID, layout, cfg.env.n_max, cfg.env.perception_radius)
        after = AvStatus(
            frames[end][AV_ID].speed,
            k == n and outcome == Outcome.COLLIDED.value,
            k == n and outcome == Outcome.ARRIVED.value,
        )
        reward = _recompute(status, after, actions[k - 1], frames[end], v0, cfg, phi)
        status = after
        logged_reward = logged[k - 1] if k - 1 < len(logged) else None
        diff = None
        if logged_reward is not None:
            diff = max(abs(reward.as_dict()[key] - float(logged_reward[key])) for key in reward.as_dict())
        yield {
            "step": k,
            "t": end * dt,
            "observation": obs.as_dict(),
            "action": actions[k - 1],
            "av_speed": frames[end][AV_ID].speed,
            "reward": reward.as_dict(),
            "logged_reward": logged_reward,
            "max_abs_diff": diff,
            "outcome": outcome if k == n else None,
        }


def write_replay(records: Iterator[Dict[str, Any]], out_path: str) -> int:
    """Write records as JSON lines; returns how many were written."""
    count = 0
    with open(out_path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")
            count += 1
    logger.info(f"Replay wrote {count} decision steps to {out_path}")
    return count
