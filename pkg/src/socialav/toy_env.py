"""
1-D reach-target environment with the intersection environment's reset/step
contract, used to sanity-check PPO quickly.
"""
from __future__ import annotations

from typing import Any, Dict, List, Tuple

import numpy as np
from gymnasium import spaces
from gymnasium.utils import seeding

from .env import Action, EpisodeResult, Observation, Outcome, RewardBreakdown


class ReachEnv:
    """Move a point on [-1, 1] toward a random target; +1 per step spent within tolerance."""

    def __init__(self, n_max: int = 6, episode_steps: int = 20, move: float = 0.2, tolerance: float = 0.15):
        self.n_max = n_max
        self.episode_steps = episode_steps
        self.move = move
        self.tolerance = tolerance
        self.observation_space = spaces.Dict({
            "ego": spaces.Box(-1.0, 1.0, shape=(4,), dtype=np.float32),
            "neighbors": spaces.Box(-np.inf, np.inf, shape=(n_max, 4), dtype=np.float32),
            "mask": spaces.MultiBinary(n_max),
        })
        self.action_space = spaces.Discrete(len(Action))
        self.x = 0.0
        self.target = 0.0
        self.steps = 0
        self.done = True
        self._return = 0.0

    def reset(self, seed: int) -> Observation:
        rng, _ = seeding.np_random(seed)
        self.x = float(rng.uniform(-1.0, 1.0))
        self.target = float(rng.uniform(-1.0, 1.0))
        self.steps = 0
        self.done = False
        self._return = 0.0
        return self.observe()

    def observe(self) -> Observation:
        return Observation(
            ego=np.array([self.x, self.target, self.target - self.x, 0.0], dtype=np.float32),
            neighbors=np.zeros((self.n_max, 4), dtype=np.float32),
            mask=np.zeros(self.n_max, dtype=bool),
            neighbor_ids=tuple([-1] * self.n_max),
        )

    def histories(self) -> Dict[int, np.ndarray]:
        return {}

    def step(self, action: int) -> Tuple[Observation, RewardBreakdown, bool, Dict[str, Any]]:
        delta = {Action.SLOW_DOWN: -self.move, Action.CRUISE: 0.0, Action.SPEED_UP: self.move}[Action(int(action))]
        self.x = min(max(self.x + delta, -1.0), 1.0)
        self.steps += 1
        r = 1.0 if abs(self.x - self.target) < self.tolerance else 0.0
        self._return += r
        self.done = self.steps >= self.episode_steps
        outcome = None
        if self.done:
            outcome = Outcome.ARRIVED if r > 0 else Outcome.TIMEOUT
        reward = RewardBreakdown(r_c=0.0, r_e=r, r_a=0.0, R_E=r, R_C=0.0, R_global=r)
        return self.observe(), reward, self.done, {"step": self.steps, "outcome": outcome.value if outcome else None, "av_speed": 0.0}

    def result(self) -> EpisodeResult:
        close = abs(self.x - self.target) < self.tolerance
        return EpisodeResult(
            outcome=Outcome.ARRIVED if close else Outcome.TIMEOUT,
            steps=self.steps,
            return_E=self._return,
            return_C=0.0,
            return_global=self._return,
            avg_speed=0.0,
            min_pet=None,
            speed_profile=[],
        )
