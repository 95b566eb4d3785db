from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs.demos import run_episode


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    returns: np.ndarray

    @property
    def n(self) -> int:
        return len(self.returns)


def evaluate(actor, env, n: int, seed: int = 0) -> EvalResult:
    """Run ``n`` episodes with ``actor``; the oracle reward is read only here.

    Episode ``i`` uses environment seed ``seed + i`` so different actors can be
    compared on identical start states.
    """
    if n < 1:
        raise ValueError("evaluation needs at least one episode")
    successes, returns = [], []
    for i in range(n):
        traj = run_episode(env, actor, seed=seed + i)
        successes.append(traj.success)
        returns.append(traj.oracle_return)
    return EvalResult(float(np.mean(successes)), float(np.mean(returns)), np.array(returns))
