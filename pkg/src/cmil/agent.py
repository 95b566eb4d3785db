"""Tanh-Gaussian actor, twin critics with targets, and lambda-return losses.

Reward indexing: ``rewards[k-1]`` is the reward for the transition that
*arrives* at latent ``k``, i.e. it is computed at ``(s_{k-1}, a_{k-1})``.
``values[k]`` is the bootstrap value ``V_0`` at latent ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    MLP,
    Adam,
    DiagGaussian,
    EnsembleMLP,
    Graph,
    Module,
    Tensor,
    as_tensor,
    concat,
    gaussian_head,
    gaussian_logprob,
    minimum,
    stack,
    tanh,
)

from .errors import NonFiniteLossError

ACTION_EPS = 1e-4


class Policy(Module):
    """Gaussian over pre-squash actions; the action is ``tanh`` of a sample."""

    def __init__(self, latent_dim: int, act_dim: int, rng: np.random.Generator, hidden: int = 128,
                 layers: int = 2, activation: str = "elu", log_std_range=(-5.0, 2.0)):
        self.net = MLP([latent_dim, *([hidden] * layers), 2 * act_dim], rng, activation,
                       name="policy")
        self.act_dim = act_dim
        self.log_std_range = log_std_range

    def parameters(self):
        return self.net.parameters()

    def dist(self, graph: Graph, latent) -> DiagGaussian:
        return gaussian_head(self.net(latent, graph), self.act_dim, *self.log_std_range)

    def act(self, graph: Graph, latent, rng: np.random.Generator | None = None,
            deterministic: bool = False, noise: np.ndarray | None = None) -> Tensor:
        d = self.dist(graph, latent)
        if deterministic:
            return tanh(d.mean)
        if noise is None:
            noise = rng.standard_normal(d.mean.shape)
        return tanh(d.sample(noise))

    def log_prob(self, graph: Graph, latent, action) -> Tensor:
        """Log-density of a squashed action, including the tanh Jacobian."""
        a = np.clip(np.asarray(action.value if isinstance(action, Tensor) else action,
                               dtype=np.float64), -1.0 + ACTION_EPS, 1.0 - ACTION_EPS)
        pre = np.arctanh(a)
        logp = gaussian_logprob(self.dist(graph, latent), pre)
        return logp - np.sum(np.log1p(-a * a), axis=-1)

    def act_values(self, latent: np.ndarray, deterministic: bool = True,
                   rng: np.random.Generator | None = None) -> np.ndarray:
        return self.act(Graph(record=False), latent, rng, deterministic).value


class CriticPair(Module):
    """Two Q networks (stacked) plus their soft-updated target copies."""

    def __init__(self, latent_dim: int, act_dim: int, rng: np.random.Generator, hidden: int = 128,
                 layers: int = 2, activation: str = "elu"):
        sizes = [latent_dim + act_dim, *([hidden] * layers), 1]
        self.online = EnsembleMLP(2, sizes, rng, activation, name="critic")
        self.target = EnsembleMLP(2, sizes, rng, activation, name="critic_target")
        for t, o in zip(self.target.parameters(), self.online.parameters()):
            t.value[...] = o.value

    def parameters(self):
        """Trainable parameters only; targets move by :func:`soft_update`."""
        return self.online.parameters()

    def all_parameters(self):
        return self.online.parameters() + self.target.parameters()

    def named_parameters(self):
        return {p.name: p for p in self.all_parameters()}

    def state(self):
        return {p.name: p.value.copy() for p in self.all_parameters()}

    def load_state(self, arrays):
        for p in self.all_parameters():
            p.value[...] = arrays[p.name]

    def q(self, graph: Graph, latent, action, target: bool = False) -> Tensor:
        """Both critics' outputs, shape ``(2, ...)``."""
        x = concat([as_tensor(latent, graph), as_tensor(action, graph)], axis=-1)
        net = self.target if target else self.online
        lead = x.shape[:-1]
        out = net(x.reshape(-1, x.shape[-1]), graph)  # (2, prod(lead), 1)
        return out.reshape(2, *lead)


def bootstrap_value(critics: CriticPair, graph: Graph, latent, action, target: bool = False) -> Tensor:
    """``V_0 = min(Q_1, Q_2)`` elementwise."""
    q = critics.q(graph, latent, action, target=target)
    return minimum(q[0], q[1])


def soft_update(critics: CriticPair, tau: float) -> None:
    """``target <- (1 - tau) target + tau online`` for every parameter."""
    for t, o in zip(critics.target.parameters(), critics.online.parameters()):
        t.value *= 1.0 - tau
        t.value += tau * o.value


def td_lambda(rewards, values, gamma: float, lam: float, t: int):
    """TD(lambda) estimate at step ``t`` of a horizon-``H`` rollout.

    ``rewards`` has length ``H`` and ``values`` length ``H + 1``.  Uses the
    backward recursion ``G_t = r_{t+1} + gamma ((1-lam) V_0(t+1) + lam G_{t+1})``
    with ``G_H = V_0(H)``.
    """
    h = len(rewards)
    if len(values) != h + 1:
        raise ValueError(f"need {h + 1} bootstrap values for {h} rewards, got {len(values)}")
    if not 0 <= t < h:
        raise ValueError(f"t must lie in [0, {h - 1}], got {t}")
    return lambda_returns(rewards, values, gamma, lam)[t]


def lambda_returns(rewards, values, gamma: float, lam: float) -> list:
    """All TD(lambda) estimates ``[G_0, ..., G_{H-1}]`` by one backward pass.

    Works elementwise on floats, arrays or tensors (batched over trailing axes).
    """
    h = len(rewards)
    g = values[h]
    out = [None] * h
    for t in range(h - 1, -1, -1):
        g = rewards[t] + gamma * ((1.0 - lam) * values[t + 1] + lam * g)
        out[t] = g
    return out


@dataclass
class ActorLossResult:
    loss: Tensor
    value_term: float
    bc_nll: float
    mean_return: float


def actor_loss(policy: Policy, graph: Graph, rewards, values, gamma: float, lam: float,
               beta: float = 0.0, expert_latents=None, expert_actions=None,
               mixture: bool = True, value_scale: float = 1.0) -> ActorLossResult:
    """Negative mean of ``lam * V_lambda + (1 - lam) * V_0`` plus ``beta`` * BC NLL.

    ``rewards`` (length ``H``) and ``values`` (length ``H + 1``) are tensors
    built on ``graph`` from an imagined rollout, so gradients reach the policy
    through the dynamics, reward and critic.  With ``mixture=False`` only
    ``V_lambda`` is maximized.  The value term is divided by ``value_scale``.
    """
    h = len(rewards)
    returns = lambda_returns(rewards, values, gamma, lam)
    terms = []
    for t in range(h):
        terms.append(lam * returns[t] + (1.0 - lam) * values[t] if mixture else returns[t])
    value_term = -stack(terms, axis=0).mean()
    if value_scale != 1.0:
        value_term = value_term / value_scale
    loss = value_term
    bc = 0.0
    if beta > 0.0:
        if expert_latents is None or len(expert_latents) == 0:
            raise ValueError("behaviour-cloning term needs expert pairs")
        nll = -policy.log_prob(graph, expert_latents, expert_actions).mean()
        loss = loss + beta * nll
        bc = float(nll.value)
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("actor loss is not finite",
                                 {"value_term": float(value_term.value), "bc_nll": bc})
    mean_ret = float(np.mean([np.mean(r.value) for r in returns]))
    return ActorLossResult(loss, float(value_term.value), bc, mean_ret)


class ReturnScale:
    """Running spread of lambda-returns used to normalize the actor's value term.

    Tracks an exponential moving average of the 5th-95th percentile range and
    reports ``max(1, range)``, so small returns are left untouched.
    """

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self.spread: float | None = None

    def update(self, returns: np.ndarray) -> float:
        lo, hi = np.percentile(returns, [5.0, 95.0])
        s = float(hi - lo)
        self.spread = s if self.spread is None else self.decay * self.spread + (1 - self.decay) * s
        return self.scale

    @property
    def scale(self) -> float:
        return 1.0 if self.spread is None else max(1.0, self.spread)


def critic_targets(rewards: np.ndarray, target_values: np.ndarray, gamma: float, lam: float):
    """Detached lambda-return targets from target-network bootstrap values.

    ``rewards`` is ``(H, N)``, ``target_values`` is ``(H + 1, N)``; returns
    ``(H, N)``.
    """
    return np.stack(lambda_returns(list(rewards), list(target_values), gamma, lam))


def data_targets(rewards: np.ndarray, next_v0: np.ndarray, next_vlambda: np.ndarray,
                 gamma: float, lam: float) -> np.ndarray:
    """``r_{j+1} + gamma ((1-lam) V0(s_{j+1}) + lam V_lambda(s_{j+1}))``."""
    return rewards + gamma * ((1.0 - lam) * next_v0 + lam * next_vlambda)


def critic_loss(critics: CriticPair, graph: Graph, model_latents, model_actions,
                model_targets, data_latents, data_actions, data_y) -> Tensor:
    """Squared error of both critics on imagined and real transitions.

    ``model_latents`` ``(H, N, d)`` with targets ``(H, N)``; ``data_latents``
    ``(M, d)`` with targets ``(M,)``.  Each part is averaged over its
    transitions, summed over the two critics, and the parts are added.
    """
    q_model = critics.q(graph, model_latents, model_actions)  # (2, H, N)
    err_m = q_model - np.asarray(model_targets)[None]
    model_part = (err_m * err_m).mean(axis=(1, 2)).sum()
    q_data = critics.q(graph, data_latents, data_actions)  # (2, M)
    err_d = q_data - np.asarray(data_y)[None]
    data_part = (err_d * err_d).mean(axis=1).sum()
    loss = model_part + data_part
    if not np.isfinite(loss.value):
        raise NonFiniteLossError("critic loss is not finite",
                                 {"model": float(model_part.value), "data": float(data_part.value)})
    return loss


def bc_nll(policy: Policy, latents, actions) -> float:
    return float(-policy.log_prob(Graph(record=False), latents, actions).value.mean())


def bc_pretrain(policy: Policy, latents: np.ndarray, actions: np.ndarray, steps: int,
                optimizer: Adam, rng: np.random.Generator, batch_size: int = 1024) -> dict:
    """Maximum-likelihood fit of expert actions on fixed expert latents.

    The optimizer's learning rate is annealed to zero on a cosine schedule
    (and restored afterwards): with a constant rate the last iterate jitters
    enough to move the policy's resting point by more than the goal radius.
    """
    if len(latents) == 0:
        raise ValueError("behaviour cloning needs at least one expert pair")
    init = bc_nll(policy, latents, actions)
    lr0 = optimizer.lr
    full = len(latents) <= batch_size
    try:
        for i in range(steps):
            optimizer.lr = 0.5 * lr0 * (1.0 + np.cos(np.pi * i / steps))
            idx = slice(None) if full else rng.integers(0, len(latents), size=batch_size)
            g = Graph()
            loss = -policy.log_prob(g, latents[idx], actions[idx]).mean()
            optimizer.zero_grad()
            g.backward(loss)
            optimizer.step()
    finally:
        optimizer.lr = lr0
    return {"bc_nll_init": init, "bc_nll": bc_nll(policy, latents, actions)}
