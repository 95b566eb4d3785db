"""Environments, scripted experts and demonstration I/O."""
from __future__ import annotations

import numpy as np

from .demos import (
    DemoFormatError,
    DemoSet,
    ExpertTooWeakError,
    Trajectory,
    collect_demos,
    read_demos,
    run_episode,
    write_demos,
)
from .pointmass import PointMassEnv, RandomActor, ScriptedExpert
from .tabular import (
    TabularEnv,
    TabularMDP,
    TabularPOMDP,
    perturb_transition,
    random_pomdp,
    random_stochastic,
    random_tabular,
)


def parse_env_id(env_id: str) -> tuple[str, tuple[int, ...]]:
    parts = env_id.split(":")
    if parts[0] == "pointmass" and len(parts) == 1:
        return "pointmass", ()
    if parts[0] == "tabular" and len(parts) == 4:
        try:
            seed, s, a = (int(p) for p in parts[1:])
        except ValueError:
            raise ValueError(f"bad tabular env id {env_id!r}; expected tabular:<seed>:<S>:<A>")
        return "tabular", (seed, s, a)
    raise ValueError(f"unknown env id {env_id!r}; expected 'pointmass' or 'tabular:<seed>:<S>:<A>'")


def make_env(env_id: str, seed: int = 0, **kwargs):
    kind, args = parse_env_id(env_id)
    if kind == "pointmass":
        return PointMassEnv(seed=seed, **kwargs)
    tseed, s, a = args
    return TabularEnv(random_tabular(tseed, s, a), seed=seed, **kwargs)


class TabularExpert:
    """Greedy optimal policy of a fully observed :class:`TabularEnv`, one-hot actions."""

    def __init__(self, env: TabularEnv, n_iter: int = 1000):
        mdp = env.model.mdp
        q = np.zeros((mdp.n_states, mdp.n_actions))
        for _ in range(n_iter):
            q = mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)
        self.greedy = q.argmax(axis=1)
        self.n_actions = mdp.n_actions

    def reset(self) -> None:
        pass

    def act(self, obs) -> np.ndarray:
        out = np.zeros(self.n_actions)
        out[self.greedy[int(np.argmax(obs))]] = 1.0
        return out


def make_expert(env):
    if isinstance(env, PointMassEnv):
        return ScriptedExpert.for_env(env)
    if isinstance(env, TabularEnv):
        return TabularExpert(env)
    raise TypeError(f"no scripted expert for {type(env).__name__}")
