from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..envs.demos import DemoSet, Trajectory


@dataclass(frozen=True)
class SequenceBatch:
    """What the learner sees: no reward field, by construction."""

    observations: np.ndarray  # (B, L, obs_dim)
    actions: np.ndarray  # (B, L, act_dim)
    is_expert: np.ndarray  # (B,) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.observations.shape[:2]


class ReplayBuffer:
    """Whole-episode ring buffer plus the immutable expert demo set.

    Capacity is counted in environment steps; the oldest agent episodes are
    evicted first and demos are never evicted.
    """

    def __init__(self, demos: DemoSet, capacity: int = 1_000_000):
        if len(demos) == 0:
            raise ValueError("replay buffer needs a non-empty demo set")
        self.demos = tuple(demos.trajectories)
        self.capacity = capacity
        self.episodes: deque[Trajectory] = deque()
        self.steps = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, traj: Trajectory) -> None:
        # oracle rewards stay with the evaluation code, not in the buffer
        self.episodes.append(Trajectory(traj.observations, traj.actions, traj.success))
        self.steps += len(traj)
        while self.steps > self.capacity and len(self.episodes) > 1:
            self.steps -= len(self.episodes.popleft())

    @staticmethod
    def _window(traj: Trajectory, length: int, rng: np.random.Generator):
        if len(traj) < length:
            raise ValueError(f"episode of length {len(traj)} is shorter than sequence length {length}")
        start = int(rng.integers(0, len(traj) - length + 1))
        return traj.observations[start:start + length], traj.actions[start:start + length]

    def _sample_from(self, pool, n: int, length: int, rng: np.random.Generator):
        obs, act = [], []
        for i in rng.integers(0, len(pool), size=n):
            o, a = self._window(pool[int(i)], length, rng)
            obs.append(o)
            act.append(a)
        return obs, act

    def sample(self, n_demo: int, n_agent: int, length: int, rng: np.random.Generator) -> SequenceBatch:
        """Contiguous windows: ``n_demo`` from demos followed by ``n_agent`` from agent episodes."""
        if n_agent > 0 and not self.episodes:
            raise ValueError("no agent episodes to sample from")
        obs_d, act_d = self._sample_from(self.demos, n_demo, length, rng)
        obs_a, act_a = self._sample_from(self.episodes, n_agent, length, rng) if n_agent else ([], [])
        obs = np.asarray(obs_d + obs_a, dtype=np.float64)
        act = np.asarray(act_d + act_a, dtype=np.float64)
        flags = np.array([True] * n_demo + [False] * n_agent)
        return SequenceBatch(obs, act, flags)
