import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.config import DriversConfig
from socialav.drivers import (
    ConflictAgent,
    DriverStyle,
    IdmParams,
    LaneContext,
    MobilParams,
    PredictionConfig,
    has_priority,
    idm_accel,
    mobil_should_change,
    predict_constant_speed,
    style_params,
    yield_decision,
)
from socialav.dynamics import VehicleState
from socialav.layout import IntersectionLayout, build_route

MODERATE = IdmParams(d0=5.0, T=1.5, a0=2.5, b0=4.0, v0=8.0)


def _idm_oracle(v, gap, dv, d0, T, a0, b0, v0, delta=4.0):
    b_max = 2.0 * b0
    if gap <= 0:
        return -b_max
    s_star = d0 + v * T + v * dv / (2.0 * math.sqrt(a0 * b0))
    if s_star < 0:
        s_star = 0.0
    a = a0 * (1.0 - (v / v0) ** delta - (s_star / gap) ** 2)
    return max(-b_max, min(a0, a))


def _agent(vid, arm, movement, s, speed, in_box=False):
    layout = IntersectionLayout()
    route = build_route(layout, arm, movement)
    x, y = route.polyline.point_at(s)
    state = VehicleState(x, y, route.polyline.heading_at(s), speed)
    return ConflictAgent(vid, arm, in_box, speed, predict_constant_speed(state, route.polyline, PredictionConfig()))


@pytest.mark.parametrize("style", [s.value for s in DriverStyle])
def test_idm_matches_scalar_oracle(style):
    p = style_params(style, DriversConfig())
    rng = np.random.default_rng(11)
    for _ in range(100):
        v = float(rng.uniform(0.0, 12.0))
        gap = float(rng.uniform(0.5, 80.0))
        dv = float(rng.uniform(-6.0, 6.0))
        expected = _idm_oracle(v, gap, dv, p.d0, p.T, p.a0, p.b0, p.v0)
        assert abs(idm_accel(v, gap, dv, p) - expected) <= 1e-9


def test_idm_worked_examples():
    aggressive = style_params("Aggressive", DriversConfig())
    assert idm_accel(0.0, math.inf, 0.0, aggressive) == 5.0
    assert idm_accel(MODERATE.v0, math.inf, 0.0, MODERATE) == 0.0
    assert idm_accel(6.0, 20.0, 2.0, MODERATE) == pytest.approx(
        _idm_oracle(6.0, 20.0, 2.0, 5.0, 1.5, 2.5, 4.0, 8.0), abs=1e-9
    )


def test_idm_overlap_returns_emergency_braking():
    assert idm_accel(5.0, 0.0, 0.0, MODERATE) == -8.0
    assert idm_accel(5.0, -1.0, 0.0, MODERATE) == -8.0


def test_idm_free_road_equals_free_term_exactly():
    for v in (0.0, 1.3, 4.0, 7.9):
        assert idm_accel(v, math.inf, 3.0, MODERATE) == MODERATE.a0 * (1.0 - (v / MODERATE.v0) ** 4.0)


def test_idm_is_monotone():
    rng = np.random.default_rng(5)
    for _ in range(200):
        v = float(rng.uniform(0.0, 10.0))
        gap = float(rng.uniform(1.0, 50.0))
        dv = float(rng.uniform(-4.0, 4.0))
        base = idm_accel(v, gap, dv, MODERATE)
        assert idm_accel(v + 0.5, gap, dv, MODERATE) <= base + 1e-12
        assert idm_accel(v, gap + 0.5, dv, MODERATE) >= base - 1e-12
        assert idm_accel(v, gap, dv + 0.5, MODERATE) <= base + 1e-12


def test_idm_output_is_clamped():
    assert idm_accel(12.0, 0.5, 10.0, MODERATE) == -MODERATE.b_max
    assert idm_accel(0.0, 1000.0, -10.0, MODERATE) <= MODERATE.a0


def test_mobil_empty_target_lane_beats_blocked_lane():
    blocked = LaneContext(leader_gap=6.0, leader_speed=0.0)
    assert mobil_should_change(6.0, blocked, LaneContext(), MobilParams(), MODERATE)


def test_mobil_vetoes_unsafe_cut_in():
    blocked = LaneContext(leader_gap=6.0, leader_speed=0.0)
    tight = LaneContext(follower_gap=1.0, follower_speed=9.0)
    assert not mobil_should_change(6.0, blocked, tight, MobilParams(), MODERATE)


def test_mobil_identical_lanes_never_trigger():
    rng = np.random.default_rng(2)
    for _ in range(50):
        ctx = LaneContext(
            leader_gap=float(rng.uniform(5, 60)),
            leader_speed=float(rng.uniform(0, 9)),
            follower_gap=float(rng.uniform(5, 60)),
            follower_speed=float(rng.uniform(0, 9)),
        )
        assert not mobil_should_change(float(rng.uniform(0, 9)), ctx, ctx, MobilParams(), MODERATE)


def test_prediction_on_straight_route_is_uniform():
    route = build_route(IntersectionLayout(), "S", "Straight").polyline
    x, y = route.point_at(0.0)
    path = predict_constant_speed(VehicleState(x, y, math.pi / 2, 5.0), route, PredictionConfig(3.0, 0.5))
    assert path.shape == (7, 2)
    spacing = np.hypot(*np.diff(path, axis=0).T)
    np.testing.assert_allclose(spacing, 2.5, atol=1e-9)


def test_prediction_at_standstill_repeats_the_position():
    route = build_route(IntersectionLayout(), "S", "Straight").polyline
    x, y = route.point_at(10.0)
    path = predict_constant_speed(VehicleState(x, y, math.pi / 2, 0.0), route, PredictionConfig())
    assert path.shape == (7, 2)
    np.testing.assert_allclose(path, np.tile([x, y], (7, 1)))


def test_prediction_on_left_turn_stays_on_the_polyline():
    route = build_route(IntersectionLayout(), "S", "Left").polyline
    s = 50.0
    x, y = route.point_at(s)
    path = predict_constant_speed(VehicleState(x, y, route.heading_at(s), 6.0), route, PredictionConfig())
    for px, py in path:
        _, lateral = route.project(px, py)
        assert abs(lateral) < 1e-6


def test_prediction_is_truncated_at_route_end():
    route = build_route(IntersectionLayout(), "S", "Straight").polyline
    x, y = route.point_at(route.length - 2.0)
    path = predict_constant_speed(VehicleState(x, y, math.pi / 2, 5.0), route, PredictionConfig())
    assert len(path) == 1


def test_yield_without_conflict_returns_none():
    ego = _agent(1, "S", "Straight", 45.0, 5.0)
    other = _agent(2, "N", "Right", 10.0, 5.0)
    assert yield_decision(ego, [other], PredictionConfig(), MODERATE) is None


def test_yield_brakes_for_traffic_from_the_right():
    # both 15 m short of the crossing point, other vehicle approaches from the right
    ego = _agent(1, "S", "Straight", 45.0, 5.0)
    other = _agent(2, "E", "Straight", 45.0, 5.0)
    brake = yield_decision(ego, [other], PredictionConfig(), MODERATE)
    assert brake is not None and brake < 0
    assert ego.speed ** 2 / (2.0 * -brake) < 15.0


def test_yield_priority_holder_keeps_going():
    ego = _agent(2, "E", "Straight", 45.0, 5.0)
    other = _agent(1, "S", "Straight", 45.0, 5.0)
    assert yield_decision(ego, [other], PredictionConfig(), MODERATE) is None


def test_vehicle_inside_the_box_wins():
    inside = _agent(1, "S", "Straight", 55.0, 3.0, in_box=True)
    outside = _agent(2, "E", "Straight", 45.0, 5.0)
    point = np.zeros(2)
    assert has_priority(inside, outside, point)
    assert not has_priority(outside, inside, point)


def test_priority_is_exclusive_for_every_pair():
    rng = np.random.default_rng(9)
    arms = ["N", "E", "S", "W"]
    for i in range(100):
        a = _agent(1, arms[i % 4], "Straight", float(rng.uniform(20, 58)), float(rng.uniform(0, 8)), bool(rng.random() < 0.3))
        b = _agent(2, arms[(i + 1 + i // 4) % 4], "Left", float(rng.uniform(20, 58)), float(rng.uniform(0, 8)), bool(rng.random() < 0.3))
        point = rng.uniform(-5, 5, size=2)
        assert has_priority(a, b, point) != has_priority(b, a, point)


def test_mobil_params_from_config():
    p = MobilParams.from_config(DriversConfig())
    assert (p.politeness, p.accel_gain_threshold, p.safe_braking) == (0.3, 0.2, 4.0)
