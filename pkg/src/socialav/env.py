"""
Unsignalized-intersection environment: spawning, HV behaviour, observations,
the ego/coordination reward and episode bookkeeping.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from gymnasium import spaces
from gymnasium.utils import seeding

from .config import ARMS, MOVEMENTS, EnvConfig, RunConfig, SocialConfig
from .drivers import ConflictAgent, IdmParams, PredictionConfig, idm_accel, predict_constant_speed, style_params, yield_decision
from .dynamics import BicycleParams, ControlInput, PidGains, VehicleState, pid_speed, step_bicycle, track_route
from .error_handler import SimulationError
from .layout import IntersectionLayout, Route, build_route
from .logging_utils import setup_logger
from .safety import LogRow, compute_pet, detect_collision, time_to_collision

logger = setup_logger("socialav.env")

AV_ID = 0
LOG_COLUMNS = ("t", "vehicle_id", "x", "y", "heading", "speed", "is_av")


class Action(IntEnum):
    SLOW_DOWN = 0
    CRUISE = 1
    SPEED_UP = 2


class Outcome(str, Enum):
    ARRIVED = "Arrived"
    COLLIDED = "Collided"
    TIMEOUT = "Timeout"


@dataclass
class Observation:
    ego: np.ndarray
    neighbors: np.ndarray
    mask: np.ndarray
    neighbor_ids: Tuple[int, ...]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "ego": self.ego.tolist(),
            "neighbors": self.neighbors.tolist(),
            "mask": [bool(m) for m in self.mask],
            "neighbor_ids": list(self.neighbor_ids),
        }

    def to_space_sample(self) -> Dict[str, np.ndarray]:
        return {"ego": self.ego, "neighbors": self.neighbors, "mask": self.mask.astype(np.int8)}


@dataclass(frozen=True)
class RewardBreakdown:
    r_c: float
    r_e: float
    r_a: float
    R_E: float
    R_C: float
    R_global: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class EpisodeResult:
    outcome: Outcome
    steps: int
    return_E: float
    return_C: float
    return_global: float
    avg_speed: float
    min_pet: Optional[float]
    speed_profile: List[float] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["outcome"] = self.outcome.value
        return d


@dataclass(frozen=True)
class AvStatus:
    """AV facts the ego reward depends on."""
    speed: float
    collided: bool
    arrived: bool


@dataclass(frozen=True)
class CoordinationTerm:
    distance: float
    speed: float
    v0: float
    ttc: float


@dataclass
class Vehicle:
    vehicle_id: int
    state: VehicleState
    route: Route
    is_av: bool
    style: Optional[str] = None
    idm: Optional[IdmParams] = None
    v_target: float = 0.0
    pid: PidGains = field(default_factory=PidGains)
    progress: float = 0.0
    track: List[Tuple[float, float, float, float, float]] = field(default_factory=list)

    @property
    def v0(self) -> float:
        return self.idm.v0 if self.idm is not None else 0.0

    def describe(self) -> Dict[str, Any]:
        return {
            "id": self.vehicle_id,
            "is_av": self.is_av,
            "entry_arm": self.route.entry_arm,
            "movement": self.route.movement,
            "style": self.style,
            "v0": self.v0,
        }


# ---------------------------------------------------------------------------
# Reward terms
# ---------------------------------------------------------------------------

def phi_weights(phi: float) -> Tuple[float, float]:
    """(cos phi, sin phi) with the endpoints snapped to exact 0/1."""
    if phi == 0.0:
        return 1.0, 0.0
    if abs(phi - math.pi / 2.0) < 1e-12:
        return 0.0, 1.0
    return math.cos(phi), math.sin(phi)


def global_reward(R_E: float, R_C: float, phi: float) -> float:
    c, s = phi_weights(phi)
    return c * R_E + s * R_C


def ego_reward(
    before: AvStatus,
    after: AvStatus,
    action: int,
    env_cfg: EnvConfig,
    social: SocialConfig,
    v_max: float,
) -> Tuple[float, float, float, float]:
    """(r_c, r_e, r_a, R_E) for one decision step. The action itself carries no cost."""
    r_c = env_cfg.collision_penalty if after.collided and not before.collided else 0.0
    r_e = env_cfg.efficiency_scale * (after.speed / v_max)
    r_a = env_cfg.arrival_reward if after.arrived and not before.arrived else 0.0
    R_E = social.w_c * r_c + social.w_e * r_e + social.w_a * r_a
    return r_c, r_e, r_a, R_E


def coordination_terms(
    av: VehicleState,
    hvs: Sequence[Tuple[VehicleState, float]],
    perception_radius: float,
    contact_radius: float,
) -> List[CoordinationTerm]:
    """Per-HV inputs of the coordination reward for HVs inside the perception radius."""
    terms = []
    for state, v0 in hvs:
        d = math.hypot(state.x - av.x, state.y - av.y)
        if d > perception_radius:
            continue
        terms.append(CoordinationTerm(distance=d, speed=state.speed, v0=v0, ttc=time_to_collision(av, state, contact_radius)))
    return terms


def coordination_reward(terms: Sequence[CoordinationTerm], social: SocialConfig, ttc_threshold: float) -> float:
    """alpha * sum_j exp(-lambda d_j) (w_c r_c^j + w_e r_e^j)."""
    total = 0.0
    for term in terms:
        r_c = -1.0 if term.ttc < ttc_threshold else 0.0
        r_e = term.speed / term.v0
        total += math.exp(-social.distance_decay * term.distance) * (social.w_c * r_c + social.w_e * r_e)
    return social.alpha * total


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------

def observe(
    states: Mapping[int, VehicleState],
    ego_id: int,
    layout: IntersectionLayout,
    n_max: int,
    perception_radius: float,
) -> Observation:
    """Ego row (absolute, normalized) plus the n_max nearest neighbours (relative), distance-sorted."""
    ego = states[ego_id]
    ego_row = np.array(
        [ego.x / layout.arm_length, ego.y / layout.arm_length, ego.vx / layout.v_max, ego.vy / layout.v_max],
        dtype=np.float32,
    )
    ranked = []
    for vid, st in states.items():
        if vid == ego_id:
            continue
        d = math.hypot(st.x - ego.x, st.y - ego.y)
        if d <= perception_radius:
            ranked.append((d, vid))
    ranked.sort()
    neighbors = np.zeros((n_max, 4), dtype=np.float32)
    mask = np.zeros(n_max, dtype=bool)
    ids = [-1] * n_max
    for row, (_, vid) in enumerate(ranked[:n_max]):
        st = states[vid]
        neighbors[row] = (
            (st.x - ego.x) / perception_radius,
            (st.y - ego.y) / perception_radius,
            (st.vx - ego.vx) / layout.v_max,
            (st.vy - ego.vy) / layout.v_max,
        )
        mask[row] = True
        ids[row] = vid
    return Observation(ego=ego_row, neighbors=neighbors, mask=mask, neighbor_ids=tuple(ids))


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

class IntersectionEnv:
    """Single-lane cross intersection with one left-turning AV and IDM-driven HVs.

    ``include_av=False`` gives the HV-only worlds used for trajectory datasets;
    those are advanced with ``step_traffic``.
    """

    def __init__(self, cfg: RunConfig, include_av: bool = True):
        self.cfg = cfg
        self.env_cfg = cfg.env
        self.social = cfg.social
        self.layout = IntersectionLayout.from_config(cfg.layout)
        self.params = BicycleParams.from_config(cfg.dynamics)
        self.prediction = PredictionConfig.from_config(cfg.drivers)
        self.include_av = include_av
        self.dt = cfg.dynamics.dt
        self.decision_period = self.dt * self.env_cfg.decision_substeps

        n = self.env_cfg.n_max
        self.observation_space = spaces.Dict({
            "ego": spaces.Box(-np.inf, np.inf, shape=(4,), dtype=np.float32),
            "neighbors": spaces.Box(-np.inf, np.inf, shape=(n, 4), dtype=np.float32),
            "mask": spaces.MultiBinary(n),
        })
        self.action_space = spaces.Discrete(len(Action))

        self.np_random: Optional[np.random.Generator] = None
        self.vehicles: Dict[int, Vehicle] = {}
        self.finished_tracks: Dict[int, List[Tuple[float, float, float, float, float]]] = {}
        self.descriptions: Dict[int, Dict[str, Any]] = {}
        self.log_rows: List[LogRow] = []
        self.steps = 0
        self.substeps = 0
        self.done = True
        self.outcome: Optional[Outcome] = None
        self._status = AvStatus(0.0, False, False)
        self._returns = [0.0, 0.0, 0.0]
        self.speed_profile: List[float] = []
        self.actions: List[int] = []
        self.rewards: List[RewardBreakdown] = []

    # -- setup ---------------------------------------------------------------

    def reset(self, seed: int) -> Observation:
        self.np_random, _ = seeding.np_random(seed)
        self.seed = seed
        self.vehicles = {}
        self.finished_tracks = {}
        self.descriptions = {}
        self.log_rows = []
        self.steps = 0
        self.substeps = 0
        self.done = False
        self.outcome = None
        self._returns = [0.0, 0.0, 0.0]
        self.speed_profile = []
        self.actions = []
        self.rewards = []

        if self.include_av:
            self._spawn_av()
        self._spawn_hvs()
        for v in self.vehicles.values():
            self.descriptions[v.vehicle_id] = v.describe()
        self._record_history()
        self._log_substep()
        self._status = AvStatus(self.av.state.speed, False, False) if self.include_av else AvStatus(0.0, False, False)
        return self.observe() if self.include_av else None  # type: ignore[return-value]

    def _spawn_av(self) -> None:
        e = self.env_cfg
        route = build_route(self.layout, e.av_entry, e.av_movement)
        x, y = route.polyline.point_at(0.0)
        heading = route.polyline.heading_at(0.0)
        self.vehicles[AV_ID] = Vehicle(
            vehicle_id=AV_ID,
            state=VehicleState(x, y, heading, e.av_initial_speed),
            route=route,
            is_av=True,
            v_target=e.av_initial_speed,
            pid=PidGains.from_config(self.cfg.dynamics),
        )

    def _spawn_hvs(self) -> None:
        e = self.env_cfg
        rng = self.np_random
        assert rng is not None
        k = int(rng.integers(e.hv_count_min, e.hv_count_max + 1))
        styles = list(self.cfg.drivers.styles)
        next_id = AV_ID + 1
        for n in range(k):
            placed = False
            for _ in range(e.spawn_attempts):
                arm = ARMS[int(rng.integers(len(ARMS)))]
                movement = MOVEMENTS[int(rng.integers(len(MOVEMENTS)))]
                style = styles[int(rng.integers(len(styles)))]
                s = float(rng.uniform(0.0, e.spawn_max_s))
                route = build_route(self.layout, arm, movement)
                x, y = route.polyline.point_at(s)
                if all(math.hypot(x - v.state.x, y - v.state.y) >= e.spawn_spacing for v in self.vehicles.values()):
                    placed = True
                    break
            if not placed:
                logger.warning(f"Spawn infeasible after {e.spawn_attempts} attempts; using {n} of {k} HVs (seed {self.seed})")
                break
            idm = style_params(style, self.cfg.drivers)
            speed = float(rng.uniform(min(e.spawn_speed_min, idm.v0), idm.v0))
            self.vehicles[next_id] = Vehicle(
                vehicle_id=next_id,
                state=VehicleState(x, y, route.polyline.heading_at(s), speed),
                route=route,
                is_av=False,
                style=style,
                idm=idm,
                progress=s,
            )
            next_id += 1

    # -- accessors -----------------------------------------------------------

    @property
    def av(self) -> Vehicle:
        return self.vehicles[AV_ID]

    def states(self) -> Dict[int, VehicleState]:
        return {vid: self.vehicles[vid].state for vid in sorted(self.vehicles)}

    def observe(self, ego_id: int = AV_ID) -> Observation:
        return observe(self.states(), ego_id, self.layout, self.env_cfg.n_max, self.env_cfg.perception_radius)

    def histories(self) -> Dict[int, np.ndarray]:
        """Decision-rate positions (normalized by arm length) of the vehicles still in the world."""
        scale = self.layout.arm_length
        return {
            vid: np.asarray([(x / scale, y / scale) for _, x, y, _, _ in v.track], dtype=np.float32)
            for vid, v in sorted(self.vehicles.items())
        }

    def all_tracks(self) -> Dict[int, List[Tuple[float, float, float, float, float]]]:
        """(t, x, y, vx, vy) tracks of every vehicle that took part, removed ones included."""
        out = dict(self.finished_tracks)
        for vid, v in self.vehicles.items():
            out[vid] = list(v.track)
        return dict(sorted(out.items()))

    # -- dynamics ------------------------------------------------------------

    def _find_leader(self, me: Vehicle) -> Tuple[float, float]:
        """(gap, leader speed) along my route; (inf, 0) when the road ahead is free."""
        poly = me.route.polyline
        best_s = math.inf
        best_speed = 0.0
        for other in self.vehicles.values():
            if other.vehicle_id == me.vehicle_id:
                continue
            s, lat = poly.project(other.state.x, other.state.y)
            if abs(lat) >= self.layout.lane_width / 2.0 or s <= me.progress:
                continue
            if math.cos(other.state.heading - poly.heading_at(s)) < 0.5:
                continue
            if s < best_s:
                best_s, best_speed = s, other.state.speed
        if math.isinf(best_s):
            return math.inf, 0.0
        return best_s - me.progress - self.params.length, best_speed

    def _conflict_agents(self) -> Dict[int, ConflictAgent]:
        agents = {}
        for vid, v in sorted(self.vehicles.items()):
            agents[vid] = ConflictAgent(
                vehicle_id=vid,
                entry_arm=v.route.entry_arm,
                in_box=self.layout.in_box(v.state.x, v.state.y),
                speed=v.state.speed,
                path=predict_constant_speed(v.state, v.route.polyline, self.prediction),
            )
        return agents

    def _controls(self) -> Dict[int, ControlInput]:
        lookahead = self.cfg.dynamics.lookahead
        agents = self._conflict_agents()
        others = list(agents.values())
        controls: Dict[int, ControlInput] = {}
        for vid, v in sorted(self.vehicles.items()):
            steering = track_route(v.state, v.route.polyline, lookahead, self.params)
            if v.is_av:
                accel = pid_speed(v.v_target, v.state, v.pid, self.dt, self.params)
            else:
                assert v.idm is not None
                gap, lead_speed = self._find_leader(v)
                accel = idm_accel(v.state.speed, gap, v.state.speed - lead_speed, v.idm)
                brake = yield_decision(agents[vid], others, self.prediction, v.idm)
                if brake is not None:
                    accel = min(accel, brake)
            controls[vid] = ControlInput(steering=steering, accel=accel)
        return controls

    def _substep(self) -> Tuple[bool, bool]:
        """Advance every vehicle by dt. Returns (av collided, av arrived)."""
        controls = self._controls()
        for vid, v in sorted(self.vehicles.items()):
            v.state = step_bicycle(v.state, controls[vid], self.dt, self.params)
            v.progress, _ = v.route.polyline.project(v.state.x, v.state.y)
        self.substeps += 1

        pairs = detect_collision(self.states(), self.params.length, self.params.width)
        av_pairs = [p for p in pairs if AV_ID in p]
        protected = {vid for p in av_pairs for vid in p}
        removed = set()
        for a, b in pairs:
            if AV_ID in (a, b) or a in removed or b in removed:
                continue
            # HVs touching the AV are never removed
            gone = [vid for vid in (a, b) if vid not in protected]
            if gone:
                logger.info(f"HV collision between {a} and {b} at t={self.substeps * self.dt:.1f}s; removing {gone}")
                removed.update(gone)

        av_arrived = False
        margin = self.env_cfg.arrival_margin
        for vid, v in sorted(self.vehicles.items()):
            if v.progress < v.route.length - margin:
                continue
            if v.is_av:
                av_arrived = True
            elif vid not in protected:
                removed.add(vid)
        for vid in sorted(removed):
            self.finished_tracks[vid] = self.vehicles.pop(vid).track

        self._log_substep()
        return bool(av_pairs), av_arrived

    def _log_substep(self) -> None:
        t = self.substeps * self.dt
        for vid, v in sorted(self.vehicles.items()):
            st = v.state
            self.log_rows.append(LogRow(t, vid, st.x, st.y, st.heading, st.speed, v.is_av))

    def _record_history(self) -> None:
        t = self.substeps * self.dt
        for v in self.vehicles.values():
            st = v.state
            v.track.append((t, st.x, st.y, st.vx, st.vy))

    def _advance(self) -> Tuple[bool, bool]:
        collided = arrived = False
        for _ in range(self.env_cfg.decision_substeps):
            c, a = self._substep()
            collided = collided or c
            arrived = arrived or a
            if collided or arrived:
                break
        self._record_history()
        return collided, arrived

    # -- episode API ---------------------------------------------------------

    def step(self, action: int) -> Tuple[Observation, RewardBreakdown, bool, Dict[str, Any]]:
        if self.done:
            raise SimulationError("step() called on a finished episode; call reset()", component="env", operation="step")
        if not self.include_av:
            raise SimulationError("HV-only worlds advance with step_traffic()", component="env", operation="step")
        action = Action(int(action))
        av = self.av
        if action == Action.SLOW_DOWN:
            av.v_target -= self.env_cfg.speed_step
        elif action == Action.SPEED_UP:
            av.v_target += self.env_cfg.speed_step
        av.v_target = min(max(av.v_target, 0.0), self.layout.v_max)

        collided, arrived = self._advance()
        self.steps += 1

        before = self._status
        after = AvStatus(av.state.speed, collided, arrived)
        self._status = after
        reward = self.reward_for(before, after, int(action), self.states())

        self._returns[0] += reward.R_E
        self._returns[1] += reward.R_C
        self._returns[2] += reward.R_global
        self.speed_profile.append(av.state.speed)
        self.actions.append(int(action))
        self.rewards.append(reward)

        if collided:
            self.outcome = Outcome.COLLIDED
        elif arrived:
            self.outcome = Outcome.ARRIVED
        elif self.steps >= self.env_cfg.max_steps:
            self.outcome = Outcome.TIMEOUT
        self.done = self.outcome is not None

        info = {
            "step": self.steps,
            "t": self.substeps * self.dt,
            "outcome": self.outcome.value if self.outcome else None,
            "av_speed": av.state.speed,
            "v_target": av.v_target,
        }
        return self.observe(), reward, self.done, info

    def reward_for(
        self, before: AvStatus, after: AvStatus, action: int, states: Mapping[int, VehicleState]
    ) -> RewardBreakdown:
        """Full reward breakdown given the AV status change and the post-step world."""
        r_c, r_e, r_a, R_E = ego_reward(before, after, action, self.env_cfg, self.social, self.layout.v_max)
        hvs = [(st, self.descriptions[vid]["v0"]) for vid, st in sorted(states.items()) if vid != AV_ID]
        terms = coordination_terms(states[AV_ID], hvs, self.env_cfg.perception_radius, self.prediction.conflict_radius)
        R_C = coordination_reward(terms, self.social, self.env_cfg.ttc_threshold)
        return RewardBreakdown(r_c, r_e, r_a, R_E, R_C, global_reward(R_E, R_C, self.social.phi))

    def step_traffic(self) -> int:
        """One decision period of an HV-only world; returns the number of vehicles left."""
        if self.include_av:
            raise SimulationError("step_traffic() is for HV-only worlds", component="env", operation="step_traffic")
        self._advance()
        self.steps += 1
        return len(self.vehicles)

    def result(self) -> EpisodeResult:
        speeds = self.speed_profile
        return EpisodeResult(
            outcome=self.outcome or Outcome.TIMEOUT,
            steps=self.steps,
            return_E=self._returns[0],
            return_C=self._returns[1],
            return_global=self._returns[2],
            avg_speed=float(np.mean(speeds)) if speeds else 0.0,
            min_pet=compute_pet(self.log_rows, self.layout.intersection_half),
            speed_profile=list(speeds),
        )

    # -- recording -----------------------------------------------------------

    def write_log(self, path: str) -> None:
        """Substep log: one CSV line per vehicle per substep, floats in repr form."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for r in self.log_rows:
                writer.writerow([repr(r.t), r.vehicle_id, repr(r.x), repr(r.y), repr(r.heading), repr(r.speed), int(r.is_av)])

    def episode_meta(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "dt": self.dt,
            "decision_substeps": self.env_cfg.decision_substeps,
            "phi": self.social.phi,
            "vehicles": [self.descriptions[vid] for vid in sorted(self.descriptions)],
            "actions": list(self.actions),
            "rewards": [r.as_dict() for r in self.rewards],
            "outcome": self.outcome.value if self.outcome else None,
            "t_end": self.substeps * self.dt,
        }
