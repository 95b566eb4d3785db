"""Finite MDPs / POMDPs used by the exact-verification harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-12


def _check_stochastic(m: np.ndarray, what: str) -> None:
    if np.any(m < 0):
        raise ValueError(f"{what} has negative entries")
    err = np.max(np.abs(m.sum(axis=-1) - 1.0))
    if err > ROW_TOL:
        raise ValueError(f"{what} rows do not sum to 1 (max error {err:.3e})")


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    m = m / m.sum(axis=-1, keepdims=True)
    # one more pass pulls the float error well under ROW_TOL
    return m / m.sum(axis=-1, keepdims=True)


@dataclass
class TabularMDP:
    transition: np.ndarray  # [S, A, S]
    reward: np.ndarray  # [S, A]
    initial: np.ndarray  # [S]
    gamma: float
    r_max: float = 1.0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        s, a = self.reward.shape
        if self.transition.shape != (s, a, s):
            raise ValueError(f"transition shape {self.transition.shape} != {(s, a, s)}")
        if self.initial.shape != (s,):
            raise ValueError(f"initial distribution shape {self.initial.shape} != {(s,)}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        _check_stochastic(self.transition, "transition")
        if abs(self.initial.sum() - 1.0) > ROW_TOL or np.any(self.initial < 0):
            raise ValueError("initial distribution is not on the simplex")
        if np.any(self.reward < 0) or np.any(self.reward > self.r_max + 1e-12):
            raise ValueError(f"rewards must lie in [0, {self.r_max}]")

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def with_transition(self, transition: np.ndarray) -> "TabularMDP":
        return TabularMDP(transition, self.reward, self.initial, self.gamma, self.r_max)


@dataclass
class TabularPOMDP:
    mdp: TabularMDP
    observation: np.ndarray  # U: [S, O]

    def __post_init__(self):
        self.observation = np.asarray(self.observation, dtype=np.float64)
        if self.observation.ndim != 2 or self.observation.shape[0] != self.mdp.n_states:
            raise ValueError(f"observation model shape {self.observation.shape} does not match "
                             f"{self.mdp.n_states} states")
        _check_stochastic(self.observation, "observation model")

    @property
    def n_obs(self) -> int:
        return self.observation.shape[1]

    def with_transition(self, transition: np.ndarray) -> "TabularPOMDP":
        return TabularPOMDP(self.mdp.with_transition(transition), self.observation)


def random_stochastic(rng: np.random.Generator, shape, sparsity: float = 0.0) -> np.ndarray:
    """Random row-stochastic array; ``sparsity`` is the fraction of zeroed entries per row.

    At least one entry per row is always kept.
    """
    m = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if sparsity > 0.0:
        drop = rng.random(m.shape) < sparsity
        keep = rng.integers(0, shape[-1], size=shape[:-1])
        np.put_along_axis(drop, keep[..., None], False, axis=-1)
        m = np.where(drop, 0.0, m)
    return _normalize_rows(m)


def random_tabular(seed: int, n_states: int, n_actions: int, gamma: float = 0.9,
                   r_max: float = 1.0, sparsity: float = 0.0) -> TabularMDP:
    if n_states < 1 or n_actions < 1:
        raise ValueError("need at least one state and one action")
    rng = np.random.default_rng(seed)
    transition = random_stochastic(rng, (n_states, n_actions, n_states), sparsity)
    reward = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    initial = random_stochastic(rng, (n_states,))
    return TabularMDP(transition, reward, initial, gamma, r_max)


def random_pomdp(seed: int, n_states: int, n_actions: int, n_obs: int, gamma: float = 0.9,
                 sparsity: float = 0.0) -> TabularPOMDP:
    mdp = random_tabular(seed, n_states, n_actions, gamma, sparsity=sparsity)
    rng = np.random.default_rng([seed, 1])
    return TabularPOMDP(mdp, random_stochastic(rng, (n_states, n_obs)))


def perturb_transition(rng: np.random.Generator, transition: np.ndarray, rate: float) -> np.ndarray:
    """Mix each transition row with a Dirichlet draw: ``(1-rate) T + rate noise``."""
    noise = rng.dirichlet(np.ones(transition.shape[-1]), size=transition.shape[:-1])
    return _normalize_rows((1.0 - rate) * transition + rate * noise)


class TabularEnv:
    """Step-wise simulator over a :class:`TabularPOMDP` (or a fully observed MDP).

    Observations are one-hot vectors over the observation alphabet; actions are
    integer indices, or any vector whose argmax is taken.  There is no goal, so
    ``success`` is reported as true on the final step of every episode.
    """

    def __init__(self, model, seed: int = 0, horizon: int = 100):
        if isinstance(model, TabularMDP):
            model = TabularPOMDP(model, np.eye(model.n_states))
        self.model = model
        self.horizon = horizon
        self.rng = np.random.default_rng(seed)
        self.obs_dim = model.n_obs
        self.act_dim = model.mdp.n_actions
        self.state = 0
        self.t = 0
        self.done = True

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def _observe(self) -> np.ndarray:
        o = self.rng.choice(self.model.n_obs, p=self.model.observation[self.state])
        return np.eye(self.model.n_obs)[o]

    def reset(self) -> np.ndarray:
        self.state = int(self.rng.choice(self.model.mdp.n_states, p=self.model.mdp.initial))
        self.t = 0
        self.done = False
        return self._observe()

    def step(self, action):
        if self.done:
            raise RuntimeError("step() called on a terminated episode; call reset()")
        a = int(action) if np.ndim(action) == 0 else int(np.argmax(action))
        mdp = self.model.mdp
        reward = float(mdp.reward[self.state, a])
        self.state = int(self.rng.choice(mdp.n_states, p=mdp.transition[self.state, a]))
        self.t += 1
        self.done = self.t >= self.horizon
        # no goal in a random MDP: a completed episode counts as a success
        return self._observe(), reward, self.done, self.done
