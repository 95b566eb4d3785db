"""Run configuration and the flat ``key=value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data / environment
    env: str = "pointmass"
    demos: str = "demos.bin"
    out_dir: str = "runs/cmil"
    seed: int = 0
    sigma_obs: float = 0.05

    # return estimation
    gamma: float = 0.99
    lam: float = 0.95
    horizon: int = 15
    actor_target: str = "mixture"  # "mixture" (lam*V_lambda + (1-lam)*V_0) or "lambda"
    normalize_returns: bool = True  # divide the actor's value term by max(1, return spread)

    # architecture
    ensemble: int = 5
    latent_dim: int = 16
    hidden: int = 128
    layers: int = 2
    free_nats: float = 1.0
    freeze_encoder: bool = True  # inference net fixed after warm-up; dynamics keep training

    # conservative adversarial objective
    alpha: float = 10.0
    beta: float = 10.0
    disc_noise_var: float = 2.5
    eps_d: float = 1e-6
    tau: float = 0.01

    # optimisation
    model_lr: float = 3e-4
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    disc_lr: float = 8e-5
    bc_lr: float = 1e-3  # behaviour-cloning pretraining only
    grad_clip: float = 100.0
    seq_len: int = 32
    batch_size: int = 16
    imagine_starts: int = 128  # posterior latents used as rollout starts per update (0 = all)

    # schedule
    model_warmup_steps: int = 2000
    bc_steps: int = 4000
    seed_episodes: int = 5
    env_steps_per_update: int = 10
    total_env_steps: int = 150_000
    eval_interval: int = 5000
    eval_episodes: int = 10
    buffer_capacity: int = 1_000_000
    target_success: float = 0.0  # stop early once an eval reaches this (0 disables)

    # ablations
    bc_only: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("model_lr", "actor_lr", "critic_lr", "disc_lr", "bc_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam < 1.0:
            raise ConfigError("lam must lie in [0, 1)")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.ensemble < 2:
            raise ConfigError("ensemble needs at least 2 members")
        if self.alpha < 0 or self.beta < 0 or self.disc_noise_var < 0:
            raise ConfigError("alpha, beta and disc_noise_var must be >= 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.seq_len < 2 or self.batch_size < 2:
            raise ConfigError("seq_len and batch_size must be >= 2")
        if self.env_steps_per_update < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("env_steps_per_update, eval_interval and eval_episodes must be >= 1")
        if self.actor_target not in ("mixture", "lambda"):
            raise ConfigError("actor_target must be 'mixture' or 'lambda'")
        if self.imagine_starts < 0:
            raise ConfigError("imagine_starts must be >= 0")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be >= 0")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None


def parse_assignments(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        try:
            out[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path, overrides=()) -> RunConfig:
    """Read a ``key=value`` file and apply ``k=v`` override strings on top."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = parse_assignments(path.read_text(encoding="utf-8").splitlines(), str(path))
    values.update(parse_assignments(overrides, "--override"))
    return RunConfig(**values)
