"""Noise-regularized discriminator, ensemble disagreement and the conservative reward."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import MLP, Graph, Module, Tensor, as_tensor, concat, log, sigmoid, sqrt, where
from .diffcore.graph import clip_min

EPS_D = 1e-6


@dataclass
class NoiseSpec:
    variance: float = 2.5

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


class Discriminator(Module):
    """State-action classifier; ``D = sigmoid(logit)``."""

    def __init__(self, latent_dim: int, act_dim: int, rng: np.random.Generator, hidden: int = 128,
                 layers: int = 2, activation: str = "elu", eps: float = EPS_D):
        self.net = MLP([latent_dim + act_dim, *([hidden] * layers), 1], rng, activation,
                       name="disc")
        self.eps = eps

    def parameters(self):
        return self.net.parameters()

    def logit(self, graph: Graph, latent, action) -> Tensor:
        x = concat([as_tensor(latent, graph), as_tensor(action, graph)], axis=-1)
        return self.net(x, graph)[..., 0]

    def prob(self, graph: Graph, latent, action) -> Tensor:
        """``D`` clamped to ``[eps, 1 - eps]``."""
        d = sigmoid(self.logit(graph, latent, action))
        return clip_min(1.0 - clip_min(1.0 - d, self.eps), self.eps)

    def prob_values(self, latent: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.prob(Graph(record=False), latent, action).value


def discriminator_loss(disc: Discriminator, expert_latents, expert_actions, policy_latents,
                       policy_actions, noise: NoiseSpec, graph: Graph,
                       rng: np.random.Generator) -> Tensor:
    """``-mean log D(expert) - mean log(1 - D(policy))`` with Gaussian input noise.

    Inputs are treated as constants (no gradient reaches the model or
    policy).  Independent ``N(0, variance)`` noise is added to every
    concatenated state-action vector on both sides.
    """
    xe = np.concatenate([_values(expert_latents), _values(expert_actions)], axis=-1)
    xp = np.concatenate([_values(policy_latents), _values(policy_actions)], axis=-1)
    if len(xe) == 0 or len(xp) == 0:
        raise ValueError("discriminator loss needs non-empty expert and policy batches")
    if noise.variance > 0:
        xe = xe + noise.std * rng.standard_normal(xe.shape)
        xp = xp + noise.std * rng.standard_normal(xp.shape)
    split = xe.shape[-1] - _values(expert_actions).shape[-1]
    d_e = disc.prob(graph, xe[:, :split], xe[:, split:])
    d_p = disc.prob(graph, xp[:, :split], xp[:, split:])
    return -log(d_e).mean() - log(1.0 - d_p).mean()


def _values(x) -> np.ndarray:
    v = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return v.reshape(-1, v.shape[-1])


def ensemble_disagreement(member_means) -> Tensor:
    """Population std across members (axis 0), averaged over the latent axis.

    ``member_means`` has shape ``(K, ..., d)``; the result has shape ``(...)``.
    """
    graph = member_means.graph if isinstance(member_means, Tensor) else Graph(record=False)
    m = as_tensor(member_means, graph)
    if m.shape[0] < 2:
        raise ValueError(f"disagreement needs at least 2 ensemble members, got {m.shape[0]}")
    centred = m - m.mean(axis=0, keepdims=True)
    var = (centred * centred).mean(axis=0)
    # coincident members: std is exactly 0 and its (undefined) derivative is taken as 0
    pos = var.value > 0.0
    std = where(pos, sqrt(where(pos, var, 1.0)), 0.0)
    return std.mean(axis=-1)


def conservative_reward(disc: Discriminator, latent, action, member_means, is_model_rollout: bool,
                        alpha: float, graph: Graph) -> Tensor:
    """``log D - log(1 - D) - alpha * disagreement`` (penalty only on model rollouts).

    The discriminator terms are computed as the logit itself, which equals
    ``log D - log(1 - D)`` wherever the clamp is inactive.
    """
    logit = _clamped_logit(disc, graph, latent, action)
    if not is_model_rollout or alpha == 0.0:
        return logit
    return logit - alpha * ensemble_disagreement(member_means)


def _clamped_logit(disc: Discriminator, graph: Graph, latent, action) -> Tensor:
    bound = math.log((1.0 - disc.eps) / disc.eps)
    z = disc.logit(graph, latent, action)
    # clamp to the logit range that corresponds to D in [eps, 1 - eps]
    return -clip_min(-clip_min(z, -bound), -bound)


def empirical_gap_estimate(disc: Discriminator, expert_latents, expert_actions, policy_latents,
                           policy_actions) -> float:
    """Mean D on expert pairs minus mean D on policy pairs (no input noise)."""
    xe_s, xe_a = _values(expert_latents), _values(expert_actions)
    xp_s, xp_a = _values(policy_latents), _values(policy_actions)
    if len(xe_s) == 0 or len(xp_s) == 0:
        raise ValueError("gap estimate needs non-empty expert and policy batches")
    return float(disc.prob_values(xe_s, xe_a).mean() - disc.prob_values(xp_s, xp_a).mean())
