"""
Planar polylines with arc-length parameterization.
"""
from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

from .error_handler import ValidationError


class Polyline:
    """Piecewise-linear path; ``s`` is arc length from the first point."""

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValidationError(
                f"polyline needs at least two (x, y) points, got shape {pts.shape}",
                component="geometry", operation="Polyline",
            )
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], seg_len > 1e-12])
        pts = pts[keep]
        self.points = pts
        self._seg = np.diff(pts, axis=0)
        self._seg_len = np.hypot(self._seg[:, 0], self._seg[:, 1])
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.length = float(self._cum[-1])

    def __len__(self) -> int:
        return len(self.points)

    def project(self, x: float, y: float) -> Tuple[float, float]:
        """Closest point as (arc length, signed lateral offset; positive = left of travel)."""
        a = self.points[:-1]
        rel_x = x - a[:, 0]
        rel_y = y - a[:, 1]
        t = (rel_x * self._seg[:, 0] + rel_y * self._seg[:, 1]) / (self._seg_len ** 2)
        t = np.clip(t, 0.0, 1.0)
        dx = rel_x - t * self._seg[:, 0]
        dy = rel_y - t * self._seg[:, 1]
        d2 = dx * dx + dy * dy
        i = int(np.argmin(d2))
        s = float(self._cum[i] + t[i] * self._seg_len[i])
        cross = (self._seg[i, 0] * rel_y[i] - self._seg[i, 1] * rel_x[i]) / self._seg_len[i]
        return s, float(cross)

    def _locate(self, s: float) -> Tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg_len) - 1)
        return i, (s - self._cum[i]) / self._seg_len[i]

    def point_at(self, s: float) -> Tuple[float, float]:
        """Point at arc length ``s`` (clamped to the ends)."""
        i, t = self._locate(s)
        p = self.points[i] + t * self._seg[i]
        return float(p[0]), float(p[1])

    def points_at(self, s: np.ndarray) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        idx = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        t = (s - self._cum[idx]) / self._seg_len[idx]
        return self.points[idx] + t[:, None] * self._seg[idx]

    def heading_at(self, s: float) -> float:
        i, _ = self._locate(s)
        return math.atan2(self._seg[i, 1], self._seg[i, 0])
