"""
Human-driver behaviour: IDM car following, MOBIL lane-change incentive and
constant-speed conflict prediction with right-of-way yielding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .config import DriversConfig
from .dynamics import VehicleState
from .geometry import Polyline
from .layout import right_of


class DriverStyle(Enum):
    AGGRESSIVE = "Aggressive"
    MODERATE = "Moderate"
    CONSERVATIVE = "Conservative"


@dataclass(frozen=True)
class IdmParams:
    d0: float
    T: float
    a0: float
    b0: float
    v0: float
    delta_exp: float = 4.0

    @property
    def b_max(self) -> float:
        return 2.0 * self.b0


def style_params(style: str, cfg: DriversConfig) -> IdmParams:
    row = cfg.styles[style]
    return IdmParams(d0=row.d0, T=row.T, a0=row.a0, b0=row.b0, v0=row.v0, delta_exp=cfg.delta_exp)


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    accel_gain_threshold: float = 0.2
    safe_braking: float = 4.0

    @classmethod
    def from_config(cls, cfg: DriversConfig) -> "MobilParams":
        return cls(cfg.politeness, cfg.accel_gain_threshold, cfg.safe_braking)


@dataclass(frozen=True)
class PredictionConfig:
    horizon: float = 3.0
    sample_dt: float = 0.5
    conflict_radius: float = 3.0

    @classmethod
    def from_config(cls, cfg: DriversConfig) -> "PredictionConfig":
        return cls(cfg.horizon, cfg.sample_dt, cfg.conflict_radius)

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.sample_dt)) + 1


@dataclass(frozen=True)
class LaneContext:
    """Surroundings of one lane as seen from the ego position. ``inf`` gap = nobody there."""
    leader_gap: float = math.inf
    leader_speed: float = 0.0
    follower_gap: float = math.inf
    follower_speed: float = 0.0

    @property
    def has_follower(self) -> bool:
        return math.isfinite(self.follower_gap)


def idm_accel(v: float, gap: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration; ``dv`` is the approach rate v - v_lead, ``gap = inf`` means a free road."""
    if gap <= 0.0:
        return -p.b_max
    free = 1.0 - (v / p.v0) ** p.delta_exp
    if math.isinf(gap):
        a = p.a0 * free
    else:
        s_star = p.d0 + v * p.T + v * dv / (2.0 * math.sqrt(p.a0 * p.b0))
        s_star = max(s_star, 0.0)
        a = p.a0 * (free - (s_star / gap) ** 2)
    return min(max(a, -p.b_max), p.a0)


def mobil_should_change(
    v: float,
    ego: LaneContext,
    target: LaneContext,
    p: MobilParams,
    idm: IdmParams,
    vehicle_length: float = 5.0,
) -> bool:
    """MOBIL incentive plus safety criterion for moving from the ego lane to the target lane."""
    # new follower must not be forced to brake harder than safe_braking
    new_follower_after = 0.0
    new_follower_gain = 0.0
    if target.has_follower:
        vf = target.follower_speed
        new_follower_after = idm_accel(vf, target.follower_gap, vf - v, idm)
        joined_gap = target.follower_gap + vehicle_length + target.leader_gap
        new_follower_gain = new_follower_after - idm_accel(vf, joined_gap, vf - target.leader_speed, idm)
    if new_follower_after < -p.safe_braking:
        return False

    old_follower_gain = 0.0
    if ego.has_follower:
        vo = ego.follower_speed
        joined_gap = ego.follower_gap + vehicle_length + ego.leader_gap
        old_follower_gain = idm_accel(vo, joined_gap, vo - ego.leader_speed, idm) - idm_accel(
            vo, ego.follower_gap, vo - v, idm
        )

    ego_gain = idm_accel(v, target.leader_gap, v - target.leader_speed, idm) - idm_accel(
        v, ego.leader_gap, v - ego.leader_speed, idm
    )
    return ego_gain + p.politeness * (new_follower_gain + old_follower_gain) > p.accel_gain_threshold


def predict_constant_speed(state: VehicleState, route: Polyline, cfg: PredictionConfig) -> np.ndarray:
    """Positions every ``sample_dt`` over the horizon, advancing along the route at constant speed.

    Samples past the route end are dropped.
    """
    s0, _ = route.project(state.x, state.y)
    arc = s0 + state.speed * cfg.sample_dt * np.arange(cfg.n_samples)
    arc = arc[arc <= route.length + 1e-9] if state.speed > 0 else arc
    if len(arc) == 0:
        arc = np.array([min(s0, route.length)])
    return route.points_at(arc)


@dataclass(frozen=True)
class ConflictAgent:
    """What yielding needs to know about one vehicle."""
    vehicle_id: int
    entry_arm: str
    in_box: bool
    speed: float
    path: np.ndarray


def _first_conflict(a: np.ndarray, b: np.ndarray, radius: float) -> Optional[int]:
    n = min(len(a), len(b))
    if n == 0:
        return None
    d = np.hypot(a[:n, 0] - b[:n, 0], a[:n, 1] - b[:n, 1])
    hits = np.flatnonzero(d < radius)
    return int(hits[0]) if len(hits) else None


def has_priority(a: ConflictAgent, b: ConflictAgent, conflict_point: np.ndarray) -> bool:
    """True when ``a`` goes before ``b``. Exactly one of has_priority(a, b) / has_priority(b, a) holds."""
    if a.in_box != b.in_box:
        return a.in_box
    if not a.in_box:
        if right_of(a.entry_arm) == b.entry_arm:
            return False
        if right_of(b.entry_arm) == a.entry_arm:
            return True
    t_a = float(np.hypot(*(a.path[0] - conflict_point))) / max(a.speed, 0.1)
    t_b = float(np.hypot(*(b.path[0] - conflict_point))) / max(b.speed, 0.1)
    if t_a != t_b:
        return t_a < t_b
    return a.vehicle_id < b.vehicle_id


def yield_decision(
    ego: ConflictAgent,
    others: Sequence[ConflictAgent],
    cfg: PredictionConfig,
    idm: IdmParams,
) -> Optional[float]:
    """IDM braking toward the nearest conflict point held by a vehicle with priority, else None."""
    override: Optional[float] = None
    for other in others:
        if other.vehicle_id == ego.vehicle_id or other.entry_arm == ego.entry_arm:
            continue
        k = _first_conflict(ego.path, other.path, cfg.conflict_radius)
        if k is None:
            continue
        conflict_point = (ego.path[k] + other.path[k]) / 2.0
        if has_priority(ego, other, conflict_point):
            continue
        travelled = float(np.sum(np.hypot(*np.diff(ego.path[: k + 1], axis=0).T))) if k > 0 else 0.0
        gap = travelled - cfg.conflict_radius / 2.0
        accel = idm_accel(ego.speed, gap, ego.speed, idm)
        override = accel if override is None else min(override, accel)
    return override
