"""
Cross-shaped single-lane intersection: arms, routes and the conflict box.

The centre is the origin, traffic keeps right and every route is built for the
south arm (travelling +y) and rotated onto the other arms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from .config import ARMS, MOVEMENTS, LayoutConfig
from .geometry import Polyline

# quarter-turn rotations taking the south-arm frame onto each entry arm
_ROTATION: Dict[str, Tuple[int, int]] = {
    "S": (1, 0),
    "E": (0, 1),
    "N": (-1, 0),
    "W": (0, -1),
}

# the approach on an arm's right; that traffic has priority
_RIGHT_OF = {"S": "E", "E": "N", "N": "W", "W": "S"}

_EXIT_ARM = {
    ("S", "Left"): "W", ("S", "Straight"): "N", ("S", "Right"): "E",
    ("E", "Left"): "S", ("E", "Straight"): "W", ("E", "Right"): "N",
    ("N", "Left"): "E", ("N", "Straight"): "S", ("N", "Right"): "W",
    ("W", "Left"): "N", ("W", "Straight"): "E", ("W", "Right"): "S",
}


@dataclass(frozen=True)
class IntersectionLayout:
    arm_length: float = 60.0
    lane_width: float = 4.0
    intersection_half: float = 8.0
    v_max: float = 9.0
    left_turn_radius: float = 9.0
    right_turn_radius: float = 5.0
    arc_resolution: float = 0.5

    @classmethod
    def from_config(cls, cfg: LayoutConfig) -> "IntersectionLayout":
        return cls(
            arm_length=cfg.arm_length,
            lane_width=cfg.lane_width,
            intersection_half=cfg.intersection_half,
            v_max=cfg.v_max,
            left_turn_radius=cfg.left_turn_radius,
            right_turn_radius=cfg.right_turn_radius,
            arc_resolution=cfg.arc_resolution,
        )

    def in_box(self, x: float, y: float) -> bool:
        h = self.intersection_half
        return -h <= x <= h and -h <= y <= h


@dataclass(frozen=True)
class Route:
    entry_arm: str
    movement: str
    polyline: Polyline

    @property
    def exit_arm(self) -> str:
        return _EXIT_ARM[(self.entry_arm, self.movement)]

    @property
    def length(self) -> float:
        return self.polyline.length


def right_of(arm: str) -> str:
    return _RIGHT_OF[arm]


def _arc(cx: float, cy: float, radius: float, a0: float, a1: float, resolution: float) -> np.ndarray:
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / resolution)) + 1)
    angles = np.linspace(a0, a1, n)
    return np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)


def _south_route(layout: IntersectionLayout, movement: str) -> np.ndarray:
    h = layout.lane_width / 2.0
    far = layout.arm_length
    start = np.array([[h, -far]])
    if movement == "Straight":
        return np.array([[h, -far], [h, far]])
    if movement == "Left":
        r = layout.left_turn_radius
        c = h - r
        arc = _arc(c, c, r, 0.0, math.pi / 2.0, layout.arc_resolution)
        # pin the joins exactly onto the lane centre lines
        arc[0] = (h, c)
        arc[-1] = (c, h)
        return np.vstack([start, arc, [[-far, h]]])
    if movement == "Right":
        r = layout.right_turn_radius
        c = h + r
        arc = _arc(c, -c, r, math.pi, math.pi / 2.0, layout.arc_resolution)
        arc[0] = (h, -c)
        arc[-1] = (c, -h)
        return np.vstack([start, arc, [[far, -h]]])
    raise ValueError(f"unknown movement {movement!r}")


@lru_cache(maxsize=64)
def build_route(layout: IntersectionLayout, entry_arm: str, movement: str) -> Route:
    """Route polyline for an (entry arm, movement) pair; ends ``arm_length`` out on the exit arm."""
    if entry_arm not in ARMS:
        raise ValueError(f"unknown arm {entry_arm!r}")
    if movement not in MOVEMENTS:
        raise ValueError(f"unknown movement {movement!r}")
    pts = _south_route(layout, movement)
    c, s = _ROTATION[entry_arm]
    rotated = np.stack([c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]], axis=1)
    return Route(entry_arm=entry_arm, movement=movement, polyline=Polyline(rotated))
