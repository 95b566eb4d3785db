"""Expert demonstrations: collection and the binary demo file format.

File layout, little-endian::

    b"CMILDEMO"  version:u32  obs_dim:u32  act_dim:u32  n_episodes:u32
    per episode:
        length:u32                       (number of actions T)
        observations: (T+1) * obs_dim f32, row-major
        actions:      T * act_dim f32, row-major
        success:u8

Oracle rewards are evaluation-only and are never written to disk.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CMILDEMO"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


class DemoFormatError(ValueError):
    pass


class ExpertTooWeakError(RuntimeError):
    pass


@dataclass
class Trajectory:
    observations: np.ndarray  # [T+1, obs_dim]
    actions: np.ndarray  # [T, act_dim]
    success: bool = False
    oracle_rewards: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.observations = np.asarray(self.observations)
        self.actions = np.asarray(self.actions)
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("observations and actions must be 2-D arrays")
        if len(self.observations) != len(self.actions) + 1:
            raise ValueError(f"{len(self.observations)} observations for {len(self.actions)} "
                             "actions; expected T+1 observations for T actions")
        if self.oracle_rewards is not None and len(self.oracle_rewards) != len(self.actions):
            raise ValueError("oracle reward count differs from action count")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def oracle_return(self) -> float:
        if self.oracle_rewards is None:
            raise ValueError("trajectory carries no oracle rewards")
        return float(np.sum(self.oracle_rewards))

    def same_content(self, other: "Trajectory") -> bool:
        return (
            self.success == other.success
            and self.observations.shape == other.observations.shape
            and self.actions.shape == other.actions.shape
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
        )


@dataclass
class DemoSet:
    trajectories: list[Trajectory]
    obs_dim: int
    act_dim: int
    env_name: str = "pointmass"

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    def __eq__(self, other) -> bool:
        # env_name is not part of the file format and is ignored here
        if not isinstance(other, DemoSet):
            return NotImplemented
        return (
            self.obs_dim == other.obs_dim
            and self.act_dim == other.act_dim
            and len(self) == len(other)
            and all(a.same_content(b) for a, b in zip(self, other))
        )


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32)


def run_episode(env, actor, seed: int | None = None) -> Trajectory:
    if seed is not None:
        env.reseed(seed)
    obs = [env.reset()]
    actor.reset()
    actions, rewards = [], []
    done, success = False, False
    while not done:
        a = np.asarray(actor.act(obs[-1]), dtype=np.float64)
        o, r, done, success = env.step(a)
        obs.append(o)
        actions.append(np.clip(a, -1.0, 1.0))
        rewards.append(r)
    return Trajectory(np.array(obs), np.array(actions), bool(success), np.array(rewards))


def collect_demos(env, expert, n: int, seed: int = 0, min_success_rate: float = 0.5,
                  env_name: str = "pointmass") -> DemoSet:
    """Roll out ``expert`` until ``n`` successful episodes are gathered.

    Failed episodes are discarded and resampled.  If fewer than
    ``min_success_rate`` of the attempts succeed the expert is rejected.
    Arrays are stored at float32 precision, matching the file format.
    """
    if n < 1:
        raise ValueError("need at least one demonstration")
    kept: list[Trajectory] = []
    attempts = 0
    while len(kept) < n:
        traj = run_episode(env, expert, seed=seed * 1_000_003 + attempts)
        attempts += 1
        if traj.success:
            kept.append(Trajectory(_f32(traj.observations), _f32(traj.actions), True,
                                   traj.oracle_rewards))
        if attempts >= 10 and len(kept) / attempts < min_success_rate:
            raise ExpertTooWeakError(
                f"expert succeeded on {len(kept)}/{attempts} episodes "
                f"(< {min_success_rate:.0%}); refusing to build a demo set")
    return DemoSet(kept, env.obs_dim, env.act_dim, env_name)


def write_demos(path, demos: DemoSet) -> None:
    path = Path(path)
    parts = [_HEADER.pack(MAGIC, VERSION, demos.obs_dim, demos.act_dim, len(demos))]
    for i, traj in enumerate(demos):
        if traj.observations.shape[1] != demos.obs_dim or traj.actions.shape[1] != demos.act_dim:
            raise ValueError(f"episode {i} does not match the set's dimensions")
        parts.append(struct.pack("<I", len(traj)))
        parts.append(_f32(traj.observations).astype("<f4").tobytes())
        parts.append(_f32(traj.actions).astype("<f4").tobytes())
        parts.append(struct.pack("<B", 1 if traj.success else 0))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_demos(path, env_name: str = "pointmass") -> DemoSet:
    """Parse a demo file completely before returning anything."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"demo file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        if data[:8] != MAGIC[: len(data[:8])]:
            raise DemoFormatError(f"{path}: bad magic {data[:8]!r}")
        raise DemoFormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, obs_dim, act_dim, n_ep = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DemoFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DemoFormatError(f"{path}: unsupported demo format version {version}")
    pos = _HEADER.size
    trajs = []
    for ep in range(n_ep):
        if pos + 4 > len(data):
            raise DemoFormatError(f"{path}: truncated at episode {ep} (length field)")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        n_obs = (length + 1) * obs_dim
        n_act = length * act_dim
        need = 4 * (n_obs + n_act) + 1
        if pos + need > len(data):
            raise DemoFormatError(
                f"{path}: truncated in episode {ep}: need {need} bytes, {len(data) - pos} left")
        obs = np.frombuffer(data, "<f4", n_obs, pos).reshape(length + 1, obs_dim)
        pos += 4 * n_obs
        act = np.frombuffer(data, "<f4", n_act, pos).reshape(length, act_dim)
        pos += 4 * n_act
        flag = data[pos]
        pos += 1
        if flag not in (0, 1):
            raise DemoFormatError(f"{path}: episode {ep} has invalid success byte {flag}")
        trajs.append(Trajectory(obs.astype(np.float32), act.astype(np.float32), bool(flag)))
    if pos != len(data):
        raise DemoFormatError(f"{path}: {len(data) - pos} trailing bytes after {n_ep} episodes")
    return DemoSet(trajs, obs_dim, act_dim, env_name)
