import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.dynamics import (
    BicycleParams,
    ControlInput,
    PidGains,
    VehicleState,
    normalize_angle,
    pid_speed,
    rear_axle,
    step_bicycle,
    track_route,
)
from socialav.error_handler import ValidationError
from socialav.geometry import Polyline
from socialav.layout import IntersectionLayout, build_route


def _circumradius(a, b, c) -> float:
    ab = math.dist(a, b)
    bc = math.dist(b, c)
    ca = math.dist(c, a)
    area = abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])) / 2.0
    return ab * bc * ca / (4.0 * area)


def _fit_radius(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    a = np.column_stack([2.0 * pts[:, 0], 2.0 * pts[:, 1], np.ones(len(pts))])
    (cx, cy, c), *_ = np.linalg.lstsq(a, (pts ** 2).sum(axis=1), rcond=None)
    return math.sqrt(c + cx * cx + cy * cy)


def _rear_axle_loop(steering, dt, params, speed=5.0):
    """Rear-axle positions over one full constant-steering loop."""
    beta = math.atan(math.tan(steering) / 2.0)
    yaw_rate = speed * math.tan(steering) * math.cos(beta) / params.wheelbase
    state = VehicleState(0.0, 0.0, 0.0, speed)
    points = [rear_axle(state, params)]
    for _ in range(int(math.ceil(2.0 * math.pi / (yaw_rate * dt)))):
        state = step_bicycle(state, ControlInput(steering, 0.0), dt, params)
        points.append(rear_axle(state, params))
    return points


def test_zero_steering_drives_straight():
    params = BicycleParams()
    state = VehicleState(0.0, 0.0, 0.0, 5.0)
    for _ in range(10):
        state = step_bicycle(state, ControlInput(0.0, 0.0), 0.1, params)
    assert state.x == pytest.approx(5.0, abs=1e-12)
    assert state.y == 0.0
    assert state.heading == 0.0
    assert state.speed == 5.0


def test_constant_steering_turns_on_the_kinematic_radius():
    params = BicycleParams(wheelbase=2.5)
    steering = 0.3
    beta = math.atan(math.tan(steering) / 2.0)
    expected = params.wheelbase / (math.cos(beta) * math.tan(steering))

    state = VehicleState(0.0, 0.0, 0.0, 5.0)
    points = [(state.x, state.y)]
    for _ in range(300):
        state = step_bicycle(state, ControlInput(steering, 0.0), 0.01, params)
        points.append((state.x, state.y))

    radius = _circumradius(points[0], points[150], points[300])
    assert radius == pytest.approx(expected, rel=0.01)


def test_controls_are_clamped():
    params = BicycleParams(max_steer=0.6, max_accel=5.0, max_decel=-6.0)
    state = VehicleState(0.0, 0.0, 0.0, 5.0)
    wild = step_bicycle(state, ControlInput(2.0, 100.0), 0.1, params)
    tame = step_bicycle(state, ControlInput(0.6, 5.0), 0.1, params)
    assert wild == tame

    braked = step_bicycle(state, ControlInput(0.0, -100.0), 0.1, params)
    assert braked.speed == pytest.approx(4.4)


def test_speed_never_goes_negative():
    state = VehicleState(0.0, 0.0, 0.0, 0.2)
    state = step_bicycle(state, ControlInput(0.0, -6.0), 0.1, BicycleParams())
    assert state.speed == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_input_is_rejected(bad):
    state = VehicleState(0.0, 0.0, 0.0, 5.0)
    with pytest.raises(ValidationError):
        step_bicycle(state, ControlInput(bad, 0.0), 0.1, BicycleParams())
    with pytest.raises(ValidationError):
        step_bicycle(VehicleState(bad, 0.0, 0.0, 5.0), ControlInput(0.0, 0.0), 0.1, BicycleParams())


def test_non_positive_dt_is_rejected():
    with pytest.raises(ValidationError):
        step_bicycle(VehicleState(0.0, 0.0, 0.0, 5.0), ControlInput(0.0, 0.0), 0.0, BicycleParams())


def test_normalize_angle_wraps_into_half_open_interval():
    assert normalize_angle(math.pi) == math.pi
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    for angle in np.linspace(-20, 20, 101):
        wrapped = normalize_angle(float(angle))
        assert -math.pi < wrapped <= math.pi
        assert math.sin(wrapped) == pytest.approx(math.sin(angle), abs=1e-9)


def test_pid_converges_to_target_speed():
    params = BicycleParams()
    gains = PidGains()
    state = VehicleState(0.0, 0.0, 0.0, 2.0)
    for _ in range(600):
        accel = pid_speed(7.0, state, gains, 0.1, params)
        state = step_bicycle(state, ControlInput(0.0, accel), 0.1, params)
    assert state.speed == pytest.approx(7.0, abs=0.1)


def test_pid_output_and_integral_are_clamped():
    params = BicycleParams(max_accel=5.0)
    gains = PidGains(integral_limit=1.0)
    accel = 0.0
    for _ in range(100):
        accel = pid_speed(100.0, VehicleState(0.0, 0.0, 0.0, 0.0), gains, 0.1, params)
    assert accel == 5.0
    assert gains.integral_state == 1.0

    gains.reset()
    assert gains.integral_state == 0.0
    assert gains.prev_error is None


def test_pure_pursuit_follows_a_straight_line():
    params = BicycleParams()
    route = Polyline([(0.0, 0.0), (100.0, 0.0)])
    state = VehicleState(5.0, 1.5, 0.0, 5.0)
    for _ in range(200):
        steering = track_route(state, route, 5.0, params)
        state = step_bicycle(state, ControlInput(steering, 0.0), 0.05, params)
    assert abs(state.y) < 0.1
    assert abs(state.heading) < 0.05


def test_non_finite_error_names_the_quantity():
    with pytest.raises(ValidationError, match="heading must be finite") as exc:
        step_bicycle(VehicleState(0.0, 0.0, math.nan, 5.0), ControlInput(0.0, 0.0), 0.1, BicycleParams())
    assert exc.value.component == "dynamics"
    assert exc.value.operation == "step_bicycle"


def test_full_loop_radius_matches_wheelbase_over_tan_steering():
    params = BicycleParams(wheelbase=2.5)
    radius = _fit_radius(_rear_axle_loop(0.2, 0.01, params))
    assert radius == pytest.approx(params.wheelbase / math.tan(0.2), rel=0.01)


def test_radius_error_shrinks_with_the_step():
    params = BicycleParams(wheelbase=2.5)
    expected = params.wheelbase / math.tan(0.2)
    coarse = abs(_fit_radius(_rear_axle_loop(0.2, 0.1, params)) - expected)
    fine = abs(_fit_radius(_rear_axle_loop(0.2, 0.01, params)) - expected)
    assert fine * 5.0 <= coarse


@pytest.mark.parametrize("side, expected_sign", [(1.0, 1.0), (-1.0, -1.0)])
def test_pure_pursuit_saturates_on_a_sideways_target(side, expected_sign):
    params = BicycleParams()
    # rear axle sits on the route start, lookahead point is straight off to one side
    state = VehicleState(params.wheelbase / 2.0, 0.0, 0.0, 5.0)
    route = Polyline([(0.0, 0.0), (0.0, side * 100.0)])
    assert track_route(state, route, 5.0, params) == expected_sign * params.max_steer


def test_pure_pursuit_beyond_route_end_steers_straight():
    params = BicycleParams()
    route = Polyline([(0.0, 0.0), (10.0, 0.0)])
    assert track_route(VehicleState(20.0, 3.0, 1.0, 5.0), route, 5.0, params) == 0.0


def test_pure_pursuit_holds_the_left_turn_arc():
    params = BicycleParams()
    route = build_route(IntersectionLayout(), "S", "Left").polyline
    x0, y0 = route.point_at(0.0)
    state = VehicleState(x0, y0, route.heading_at(0.0), 6.0)
    worst = 0.0
    turned = False
    for _ in range(400):
        steering = track_route(state, route, 5.0, params)
        state = step_bicycle(state, ControlInput(steering, 0.0), 0.1, params)
        s, lateral = route.project(state.x, state.y)
        worst = max(worst, abs(lateral))
        turned = turned or abs(normalize_angle(state.heading - math.pi)) < 0.05
        if s >= route.length - 10.0:
            break
    assert turned
    assert worst < 0.5
