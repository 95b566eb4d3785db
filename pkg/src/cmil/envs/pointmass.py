"""Partially observed 2-D point mass and its scripted expert.

Hidden state is position and velocity; the agent only sees a noisy position.
Dynamics are the exact zero-order-hold discretisation of a double integrator::

    p' = p + v dt + a dt^2 / 2
    v' = v + a dt
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PointMassEnv:
    sigma_obs: float = 0.05
    episode_length: int = 100
    success_radius: float = 0.1
    dt: float = 0.1
    goal: np.ndarray = field(default_factory=lambda: np.zeros(2))
    start_radius: tuple[float, float] = (0.5, 1.0)
    reward_scale: float = 0.2
    seed: int = 0

    obs_dim = 2
    act_dim = 2

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=np.float64)
        self.rng = np.random.default_rng(self.seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self.done = True

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def observe(self) -> np.ndarray:
        if self.sigma_obs == 0.0:
            return self.pos.copy()
        return self.pos + self.sigma_obs * self.rng.standard_normal(2)

    def reset(self, pos=None, vel=None) -> np.ndarray:
        if pos is None:
            r = self.rng.uniform(*self.start_radius)
            theta = self.rng.uniform(0.0, 2.0 * np.pi)
            pos = self.goal + r * np.array([np.cos(theta), np.sin(theta)])
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.zeros(2) if vel is None else np.array(vel, dtype=np.float64)
        self.t = 0
        self.done = False
        return self.observe()

    def distance(self) -> float:
        return float(np.linalg.norm(self.pos - self.goal))

    def oracle_reward(self) -> float:
        return float(np.exp(-(self.distance() / self.reward_scale) ** 2))

    def step(self, action):
        """Advance one step; returns ``(observation, oracle_reward, done, success)``.

        ``success`` is only ever true on the final step: the mass must finish
        the episode within ``success_radius`` of the goal.
        """
        if self.done:
            raise RuntimeError("step() called on a terminated episode; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        dt = self.dt
        self.pos = self.pos + self.vel * dt + 0.5 * a * dt * dt
        self.vel = self.vel + a * dt
        self.t += 1
        reward = self.oracle_reward()
        self.done = self.t >= self.episode_length
        success = self.done and self.distance() < self.success_radius
        return self.observe(), reward, self.done, success


class ScriptedExpert:
    """PD controller on an alpha-beta filtered state estimate.

    The velocity estimate is a smoothed finite difference of observed
    positions, corrected by the known commanded acceleration.
    """

    def __init__(self, goal=(0.0, 0.0), kp: float = 2.0, kd: float = 2.5, dt: float = 0.1,
                 alpha: float = 0.5, beta: float = 0.1):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.kp, self.kd, self.dt = kp, kd, dt
        self.alpha, self.beta = alpha, beta
        self.reset()

    @classmethod
    def for_env(cls, env: PointMassEnv) -> "ScriptedExpert":
        return cls(goal=env.goal, dt=env.dt)

    def reset(self) -> None:
        self.pos_est = None
        self.vel_est = np.zeros(2)
        self.last_action = np.zeros(2)

    def observe(self, obs) -> None:
        obs = np.asarray(obs, dtype=np.float64)
        if self.pos_est is None:
            self.pos_est = obs.copy()
            return
        dt, a = self.dt, self.last_action
        pred_pos = self.pos_est + self.vel_est * dt + 0.5 * a * dt * dt
        pred_vel = self.vel_est + a * dt
        resid = obs - pred_pos
        self.pos_est = pred_pos + self.alpha * resid
        self.vel_est = pred_vel + (self.beta / dt) * resid

    def control(self) -> np.ndarray:
        a = self.kp * (self.goal - self.pos_est) - self.kd * self.vel_est
        return np.clip(a, -1.0, 1.0)

    def act(self, obs) -> np.ndarray:
        self.observe(obs)
        self.last_action = self.control()
        return self.last_action.copy()


class RandomActor:
    def __init__(self, act_dim: int = 2, seed: int = 0):
        self.act_dim = act_dim
        self.rng = np.random.default_rng(seed)

    def reset(self) -> None:
        pass

    def act(self, obs) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=self.act_dim)
