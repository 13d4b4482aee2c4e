"""
Vehicle kinematics and low-level tracking control shared by the AV and the HVs.

Kinematic bicycle model (reference point midway along the wheelbase), a clamped
PID speed controller and pure-pursuit lateral control. Everything here works on
plain floats; one call never touches state outside its arguments except the PID
integrator it is handed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .config import DynamicsConfig
from .error_handler import ValidationError
from .geometry import Polyline
from .validation import validate_finite


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    @property
    def vx(self) -> float:
        return self.speed * math.cos(self.heading)

    @property
    def vy(self) -> float:
        return self.speed * math.sin(self.heading)


@dataclass(frozen=True)
class ControlInput:
    steering: float
    accel: float


@dataclass(frozen=True)
class BicycleParams:
    wheelbase: float = 2.5
    length: float = 5.0
    width: float = 2.0
    max_steer: float = 0.6
    max_accel: float = 5.0
    max_decel: float = -6.0

    @classmethod
    def from_config(cls, cfg: DynamicsConfig) -> "BicycleParams":
        return cls(
            wheelbase=cfg.wheelbase,
            length=cfg.length,
            width=cfg.width,
            max_steer=cfg.max_steer,
            max_accel=cfg.max_accel,
            max_decel=cfg.max_decel,
        )


@dataclass
class PidGains:
    """PID gains plus the controller memory (integral and last error)."""
    kp: float = 1.2
    ki: float = 0.1
    kd: float = 0.0
    integral_state: float = 0.0
    integral_limit: float = 5.0
    prev_error: Optional[float] = None

    @classmethod
    def from_config(cls, cfg: DynamicsConfig) -> "PidGains":
        return cls(kp=cfg.kp, ki=cfg.ki, kd=cfg.kd, integral_limit=cfg.integral_limit)

    def reset(self) -> None:
        self.integral_state = 0.0
        self.prev_error = None


def normalize_angle(angle: float) -> float:
    """Wrap into (-pi, pi]; in-range values are returned untouched."""
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        validate_finite(name, value, component="dynamics", operation="step_bicycle")


def step_bicycle(state: VehicleState, u: ControlInput, dt: float, params: BicycleParams) -> VehicleState:
    """One forward-Euler step of the kinematic bicycle model."""
    _check_finite(x=state.x, y=state.y, heading=state.heading, speed=state.speed,
                  steering=u.steering, accel=u.accel, dt=dt)
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}", component="dynamics", operation="step_bicycle")

    steering = min(max(u.steering, -params.max_steer), params.max_steer)
    accel = min(max(u.accel, params.max_decel), params.max_accel)
    v = state.speed

    if steering == 0.0:
        x = state.x + v * math.cos(state.heading) * dt
        y = state.y + v * math.sin(state.heading) * dt
        heading = state.heading
    else:
        tan_d = math.tan(steering)
        beta = math.atan(tan_d / 2.0)
        x = state.x + v * math.cos(state.heading + beta) * dt
        y = state.y + v * math.sin(state.heading + beta) * dt
        heading = normalize_angle(state.heading + v * tan_d * math.cos(beta) / params.wheelbase * dt)

    speed = max(v + accel * dt, 0.0)
    return VehicleState(x=x, y=y, heading=heading, speed=speed)


def pid_speed(
    v_target: float,
    state: VehicleState,
    gains: PidGains,
    dt: float,
    params: Optional[BicycleParams] = None,
) -> float:
    """Acceleration command toward ``v_target``; updates ``gains`` integral/derivative memory."""
    params = params or BicycleParams()
    error = v_target - state.speed
    gains.integral_state = min(max(gains.integral_state + error * dt, -gains.integral_limit), gains.integral_limit)
    derivative = 0.0 if gains.prev_error is None else (error - gains.prev_error) / dt
    gains.prev_error = error
    accel = gains.kp * error + gains.ki * gains.integral_state + gains.kd * derivative
    return min(max(accel, params.max_decel), params.max_accel)


def rear_axle(state: VehicleState, params: BicycleParams) -> tuple:
    half = params.wheelbase / 2.0
    return state.x - half * math.cos(state.heading), state.y - half * math.sin(state.heading)


def track_route(state: VehicleState, route: Polyline, lookahead: float, params: BicycleParams) -> float:
    """Pure-pursuit steering toward the point ``lookahead`` metres further along the route."""
    rx, ry = rear_axle(state, params)
    s_proj, _ = route.project(rx, ry)
    if s_proj >= route.length:
        return 0.0
    px, py = route.point_at(s_proj + lookahead)
    alpha = normalize_angle(math.atan2(py - ry, px - rx) - state.heading)
    steering = math.atan(2.0 * params.wheelbase * math.sin(alpha) / lookahead)
    return min(max(steering, -params.max_steer), params.max_steer)
