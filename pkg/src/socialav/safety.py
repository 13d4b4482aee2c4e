"""
Surrogate safety measures: footprint overlap, time-to-collision and
post-encroachment time over the conflict box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dynamics import VehicleState


@dataclass(frozen=True)
class LogRow:
    """One substep record of one vehicle."""
    t: float
    vehicle_id: int
    x: float
    y: float
    heading: float
    speed: float
    is_av: bool


def footprint(state: VehicleState, length: float, width: float) -> np.ndarray:
    """Corners (4 x 2) of the oriented rectangle centred on the vehicle."""
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([state.x, state.y])


def rectangles_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads; touching counts as overlap."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for ex, ey in edges[:2]:
            axis = np.array([-ey, ex])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def detect_collision(
    states: Mapping[int, VehicleState], length: float = 5.0, width: float = 2.0
) -> List[Tuple[int, int]]:
    """All overlapping vehicle pairs (id_a < id_b), in id order."""
    ids = sorted(states)
    reach = math.hypot(length, width)
    corners = {i: footprint(states[i], length, width) for i in ids}
    pairs: List[Tuple[int, int]] = []
    for n, i in enumerate(ids):
        for j in ids[n + 1:]:
            if math.hypot(states[i].x - states[j].x, states[i].y - states[j].y) > reach:
                continue
            if rectangles_overlap(corners[i], corners[j]):
                pairs.append((i, j))
    return pairs


def time_to_collision(a: VehicleState, b: VehicleState, radius: float = 3.0) -> float:
    """Constant-velocity TTC until centres come within ``radius``; 0 if already there, inf if never."""
    px, py = b.x - a.x, b.y - a.y
    wx, wy = b.vx - a.vx, b.vy - a.vy
    c = px * px + py * py - radius * radius
    if c <= 0.0:
        return 0.0
    qa = wx * wx + wy * wy
    if qa == 0.0:
        return math.inf
    qb = 2.0 * (px * wx + py * wy)
    disc = qb * qb - 4.0 * qa * c
    if disc < 0.0:
        return math.inf
    t = (-qb - math.sqrt(disc)) / (2.0 * qa)
    return t if t >= 0.0 else math.inf


def _cell_of(x: float, y: float, half: float, cell: float) -> Optional[Tuple[int, int]]:
    if not (-half <= x < half and -half <= y < half):
        return None
    return int(math.floor((x + half) / cell)), int(math.floor((y + half) / cell))


def cell_occupancy(
    rows: Iterable[LogRow], half: float, cell: float = 1.0
) -> Dict[int, Dict[Tuple[int, int], Tuple[float, float]]]:
    """Per vehicle, per box cell: (first time inside, last time inside) of the vehicle centre."""
    occ: Dict[int, Dict[Tuple[int, int], Tuple[float, float]]] = {}
    for row in rows:
        key = _cell_of(row.x, row.y, half, cell)
        if key is None:
            continue
        cells = occ.setdefault(row.vehicle_id, {})
        if key in cells:
            first, last = cells[key]
            cells[key] = (min(first, row.t), max(last, row.t))
        else:
            cells[key] = (row.t, row.t)
    return occ


def compute_pet(rows: Sequence[LogRow], half: float, cell: float = 1.0) -> Optional[float]:
    """Minimum post-encroachment time over AV-HV pairs sharing a box cell, None if none do."""
    av_ids = {r.vehicle_id for r in rows if r.is_av}
    occ = cell_occupancy(rows, half, cell)
    best: Optional[float] = None
    for av in sorted(av_ids):
        av_cells = occ.get(av, {})
        for other in sorted(occ):
            if other in av_ids:
                continue
            for key, (hv_in, hv_out) in occ[other].items():
                if key not in av_cells:
                    continue
                av_in, av_out = av_cells[key]
                if av_in <= hv_in:
                    pet = abs(hv_in - av_out)
                else:
                    pet = abs(av_in - hv_out)
                if best is None or pet < best:
                    best = pet
    return best
