"""The bundle of learned components, its checkpoints, and latent-space actors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..adversary import Discriminator
from ..agent import CriticPair, Policy
from ..diffcore import Adam, load_checkpoint, save_checkpoint
from ..worldmodel import WorldModel, WorldModelConfig, filter_step


@dataclass
class Architecture:
    obs_dim: int
    act_dim: int
    latent_dim: int = 16
    hidden: int = 128
    layers: int = 2
    ensemble: int = 5
    free_nats: float = 1.0


class CMILAgent:
    def __init__(self, arch: Architecture, rng: np.random.Generator, eps_d: float = 1e-6):
        self.arch = arch
        self.model = WorldModel(
            WorldModelConfig(arch.obs_dim, arch.act_dim, arch.latent_dim, arch.hidden, arch.layers,
                             arch.ensemble, arch.free_nats), rng)
        self.policy = Policy(arch.latent_dim, arch.act_dim, rng, arch.hidden, arch.layers)
        self.critics = CriticPair(arch.latent_dim, arch.act_dim, rng, arch.hidden, arch.layers)
        self.disc = Discriminator(arch.latent_dim, arch.act_dim, rng, arch.hidden, arch.layers,
                                  eps=eps_d)

    def all_parameters(self):
        return (self.model.parameters() + self.policy.parameters()
                + self.critics.all_parameters() + self.disc.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.all_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.all_parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {p.name!r}")
            if arrays[p.name].shape != p.value.shape:
                raise ValueError(f"{p.name}: checkpoint shape {arrays[p.name].shape} != {p.value.shape}")
            p.value[...] = arrays[p.name]

    def save(self, path) -> None:
        save_checkpoint(path, self.state())

    @classmethod
    def load(cls, path) -> "CMILAgent":
        """Rebuild an agent from a checkpoint, reading sizes off the parameter shapes."""
        arrays = load_checkpoint(path)
        try:
            inf_w0 = arrays["wm.inference.w0"]
            dec_last = max(k for k in arrays if k.startswith("wm.decoder.w"))
            pol_last = max(k for k in arrays if k.startswith("policy.w"))
            arch = Architecture(
                obs_dim=arrays[dec_last].shape[1] // 2,
                act_dim=arrays[pol_last].shape[1] // 2,
                latent_dim=arrays["policy.w0"].shape[0],
                hidden=inf_w0.shape[1],
                layers=sum(k.startswith("policy.w") for k in arrays) - 1,
                ensemble=arrays["wm.dynamics.w0"].shape[0],
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: not a CMIL agent checkpoint ({exc})") from None
        agent = cls(arch, np.random.default_rng(0))
        agent.load_state(arrays)
        return agent


class Optimizers:
    def __init__(self, agent: CMILAgent, cfg):
        clip = cfg.grad_clip if cfg.grad_clip > 0 else None
        self.model = Adam(agent.model.parameters(), cfg.model_lr, clip_norm=clip)
        self.actor = Adam(agent.policy.parameters(), cfg.actor_lr, clip_norm=clip)
        self.critic = Adam(agent.critics.parameters(), cfg.critic_lr, clip_norm=clip)
        self.disc = Adam(agent.disc.parameters(), cfg.disc_lr, clip_norm=clip)
        self.bc = Adam(agent.policy.parameters(), cfg.bc_lr, clip_norm=clip)
        # dynamics and decoder only, for training after the inference net is frozen
        wm = agent.model
        self.model_tail = Adam(wm.ensemble.parameters() + wm.decoder.parameters(), cfg.model_lr,
                               clip_norm=clip)


class LatentActor:
    """Acts from raw observations by filtering latents with the inference net."""

    def __init__(self, agent: CMILAgent, deterministic: bool = True,
                 rng: np.random.Generator | None = None):
        self.agent = agent
        self.deterministic = deterministic
        self.rng = rng
        self.reset()

    def reset(self) -> None:
        self.latent = np.zeros(self.agent.arch.latent_dim)
        self.prev_action = np.zeros(self.agent.arch.act_dim)

    def act(self, obs) -> np.ndarray:
        self.latent = filter_step(self.agent.model, self.latent, self.prev_action,
                                  np.asarray(obs, dtype=np.float64))
        a = self.agent.policy.act_values(self.latent[None], self.deterministic, self.rng)[0]
        self.prev_action = a
        return a
