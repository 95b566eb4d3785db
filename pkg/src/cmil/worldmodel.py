"""Stochastic latent state-space model with an ensemble of latent dynamics.

Components:

* inference net ``q(s_t | s_{t-1}, a_{t-1}, x_t)``
* ``K`` latent transition models ``T_i(s' | s, a)`` (Gaussian, stacked weights)
* observation decoder ``p(x | s)``

Sequences follow the convention that ``actions[:, t]`` is the action taken
after observing ``observations[:, t]``; the posterior at step ``t`` therefore
conditions on ``actions[:, t-1]`` (zeros at ``t = 0``) and the initial latent
is the zero vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLossError
from .diffcore import (
    MLP,
    DiagGaussian,
    EnsembleMLP,
    Graph,
    Module,
    Tensor,
    clip_min,
    concat,
    gaussian_head,
    gaussian_kl,
    gaussian_logprob,
    stack,
)


@dataclass
class WorldModelConfig:
    obs_dim: int
    act_dim: int
    latent_dim: int = 16
    hidden: int = 128
    layers: int = 2
    ensemble_size: int = 5
    free_nats: float = 1.0
    activation: str = "elu"


class WorldModel(Module):
    def __init__(self, cfg: WorldModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        d, h = cfg.latent_dim, [cfg.hidden] * cfg.layers
        self.inference = MLP([d + cfg.act_dim + cfg.obs_dim, *h, 2 * d], rng, cfg.activation,
                             name="wm.inference")
        self.ensemble = EnsembleMLP(cfg.ensemble_size, [d + cfg.act_dim, *h, 2 * d], rng,
                                    cfg.activation, name="wm.dynamics")
        self.decoder = MLP([d, *h, 2 * cfg.obs_dim], rng, cfg.activation, name="wm.decoder")

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    @property
    def k(self) -> int:
        return self.cfg.ensemble_size

    def parameters(self):
        return self.inference.parameters() + self.ensemble.parameters() + self.decoder.parameters()

    # -- single-step pieces ------------------------------------------
    def posterior(self, graph: Graph, prev_latent, prev_action, obs) -> DiagGaussian:
        x = concat([prev_latent, prev_action, obs], axis=-1)
        return gaussian_head(self.inference(x, graph), self.latent_dim)

    def transition(self, graph: Graph, latent, action, members=None) -> DiagGaussian:
        """Per-member latent transition; mean/log-std have shape ``(K', N, d)``."""
        x = concat([latent, action], axis=-1)
        return gaussian_head(self.ensemble(x, graph, members=members), self.latent_dim)

    def mean_heads(self, graph: Graph, latent, action) -> Tensor:
        """``mu_i(s, a)`` for every member, shape ``(K, N, d)``."""
        return self.transition(graph, latent, action).mean

    def decode(self, graph: Graph, latent) -> DiagGaussian:
        return gaussian_head(self.decoder(latent, graph), self.cfg.obs_dim)


@dataclass
class Posterior:
    """Result of filtering a batch of sequences."""

    latents: Tensor  # (B, L, d) reparameterized samples
    dists: list[DiagGaussian]  # one per step, each (B, d)
    samples: list[Tensor]  # one per step, each (B, d)


def _check_sequences(observations: np.ndarray, actions: np.ndarray):
    observations = np.asarray(observations, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if observations.ndim == 2 and actions.ndim == 2:
        observations, actions = observations[None], actions[None]
    if actions.ndim != 3 or observations.ndim != 3:
        raise ValueError("expected (L, dim) or (B, L, dim) observations and actions")
    if observations.shape[:2] != actions.shape[:2]:
        raise ValueError(f"observations {observations.shape[:2]} and actions "
                         f"{actions.shape[:2]} differ in batch/length")
    return observations, actions


def infer_sequence(model: WorldModel, observations, actions, graph: Graph,
                   rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> Posterior:
    """Filter latents for ``(B, L, .)`` (or ``(L, .)``) sequences.

    ``noise`` (shape ``(B, L, d)``) fixes the reparameterization draws;
    otherwise they come from ``rng``.
    """
    observations, actions = _check_sequences(observations, actions)
    b, length, _ = observations.shape
    d = model.latent_dim
    if noise is None:
        if rng is None:
            raise ValueError("pass either rng or noise")
        noise = rng.standard_normal((b, length, d))
    latent = graph.constant(np.zeros((b, d)))
    prev_action = np.zeros((b, model.cfg.act_dim))
    dists, samples = [], []
    for t in range(length):
        dist = model.posterior(graph, latent, prev_action, observations[:, t])
        latent = dist.sample(noise[:, t])
        dists.append(dist)
        samples.append(latent)
        prev_action = actions[:, t]
    return Posterior(stack(samples, axis=1), dists, samples)


def filter_step(model: WorldModel, prev_latent: np.ndarray, prev_action: np.ndarray,
                obs: np.ndarray, mean_only: bool = True, rng=None) -> np.ndarray:
    """One posterior update without recording gradients (for acting)."""
    graph = Graph(record=False)
    dist = model.posterior(graph, graph.constant(prev_latent[None]), prev_action[None], obs[None])
    if mean_only:
        return dist.mean.value[0]
    return dist.sample(rng.standard_normal(dist.mean.shape)).value[0]


@dataclass
class ElboResult:
    loss: Tensor
    recon_nll: float
    kl: float
    kl_loss: float
    members: np.ndarray
    posterior: Posterior

    def diagnostics(self) -> dict[str, float]:
        return {"recon_nll": self.recon_nll, "kl": self.kl, "kl_loss": self.kl_loss}


def elbo_loss(model: WorldModel, observations, actions, graph: Graph, rng: np.random.Generator,
              members: np.ndarray | None = None, noise: np.ndarray | None = None,
              free_nats: float | None = None) -> ElboResult:
    """Negative ELBO averaged over batch and time.

    One ensemble member is drawn uniformly per time step to supply the prior
    for that step (pass ``members`` to fix the choice).  The averaged KL is
    floored at ``free_nats``.
    """
    observations, actions = _check_sequences(observations, actions)
    b, length, _ = observations.shape
    free = model.cfg.free_nats if free_nats is None else free_nats
    if members is None:
        members = rng.integers(0, model.k, size=length)
    if noise is None:
        noise = rng.standard_normal((b, length, model.latent_dim))
    post = infer_sequence(model, observations, actions, graph, noise=noise)

    # prior inputs (s_{t-1}, a_{t-1}) with the zero latent/action at t = 0
    zeros_s = graph.constant(np.zeros((b, model.latent_dim)))
    prev_latents = [zeros_s] + post.samples[:-1]
    prev_actions = np.concatenate([np.zeros((b, 1, model.cfg.act_dim)), actions[:, :-1]], axis=1)

    kl_terms = []
    for m in np.unique(members):
        steps = np.flatnonzero(members == m)
        s_prev = concat([prev_latents[t] for t in steps], axis=0)
        a_prev = prev_actions[:, steps].transpose(1, 0, 2).reshape(-1, model.cfg.act_dim)
        prior = model.transition(graph, s_prev, a_prev, members=[int(m)])
        prior = DiagGaussian(prior.mean[0], prior.log_std[0])
        q_mean = concat([post.dists[t].mean for t in steps], axis=0)
        q_log_std = concat([post.dists[t].log_std for t in steps], axis=0)
        kl_terms.append(gaussian_kl(DiagGaussian(q_mean, q_log_std), prior))
    kl = concat(kl_terms, axis=0).mean()

    recon = gaussian_logprob(model.decode(graph, post.latents), observations)
    recon_nll = -recon.mean()
    kl_loss = clip_min(kl, free)
    loss = recon_nll + kl_loss
    result = ElboResult(loss, float(recon_nll.value), float(kl.value), float(kl_loss.value),
                        members, post)
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("world-model loss is not finite", result.diagnostics())
    return result


@dataclass
class ImaginedRollout:
    """``H``-step latent rollout.

    ``latents[t]`` and ``actions[t]`` for ``t = 0..H`` (the action at ``H`` is
    only used for bootstrapping); ``member_means[t]`` holds every ensemble
    member's mean prediction at ``(latents[t], actions[t])`` for ``t < H``.
    Entries at ``t = 0`` are data-inferred starts.
    """

    latents: list[Tensor]
    actions: list[Tensor]
    member_means: list[Tensor]
    members: np.ndarray
    horizon: int
    truncated: bool = False
    from_data: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def batch_size(self) -> int:
        return self.latents[0].shape[0]


def imagine(model: WorldModel, policy, start_latents, horizon: int, graph: Graph,
            rng: np.random.Generator, members: np.ndarray | None = None,
            dynamics_noise: bool = True, deterministic_policy: bool = False) -> ImaginedRollout:
    """Roll ``policy`` forward inside the learned dynamics.

    Each trajectory follows one uniformly drawn ensemble member.  Everything
    is reparameterized, so the rollout is differentiable with respect to the
    policy and model parameters.  A non-finite latent stops the rollout early
    and sets ``truncated``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = start_latents if isinstance(start_latents, Tensor) else graph.constant(start_latents)
    n, d = s.shape
    if members is None:
        members = rng.integers(0, model.k, size=n)
    onehot = np.eye(model.k)[members].T[:, :, None]  # (K, N, 1)
    latents, actions, means = [s], [], []
    truncated = False
    for _ in range(horizon):
        a = policy.act(graph, s, rng, deterministic=deterministic_policy)
        actions.append(a)
        dist = model.transition(graph, s, a)
        means.append(dist.mean)
        mean = (dist.mean * onehot).sum(axis=0)
        if dynamics_noise:
            log_std = (dist.log_std * onehot).sum(axis=0)
            s = DiagGaussian(mean, log_std).sample(rng.standard_normal((n, d)))
        else:
            s = mean
        if not np.all(np.isfinite(s.value)):
            truncated = True
            break
        latents.append(s)
    if not truncated:
        actions.append(policy.act(graph, s, rng, deterministic=deterministic_policy))
    steps = len(means) if not truncated else len(means) - 1
    from_data = np.zeros(steps + 1, dtype=bool)
    from_data[0] = True
    return ImaginedRollout(latents[: steps + 1], actions[: steps + 1], means[:steps], members,
                           steps, truncated, from_data)
