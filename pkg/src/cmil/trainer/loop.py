"""The interleaved training loop: environment, model, adversary, critic, actor."""
from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adversary import (
    NoiseSpec,
    conservative_reward,
    discriminator_loss,
    empirical_gap_estimate,
    ensemble_disagreement,
)
from ..agent import (
    ReturnScale,
    actor_loss,
    bc_pretrain,
    bootstrap_value,
    critic_loss,
    critic_targets,
    data_targets,
    soft_update,
)
from ..diffcore import Graph, stack
from ..envs import make_env, make_expert
from ..envs.demos import DemoSet, Trajectory, read_demos, run_episode
from ..errors import TrainingDivergedError
from ..worldmodel import elbo_loss, imagine, infer_sequence
from .agent_state import Architecture, CMILAgent, LatentActor, Optimizers
from .buffer import ReplayBuffer
from .config import RunConfig
from .evaluation import EvalResult, evaluate
from .metrics import TIMING_HEADER, CsvLog, MetricsRow, MetricsWriter

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_000


@dataclass
class RunResult:
    checkpoint: Path
    metrics: Path
    timing: Path
    env_steps: int
    final_success: float
    best_success: float


def _env_kwargs(cfg: RunConfig) -> dict:
    return {"sigma_obs": cfg.sigma_obs} if cfg.env == "pointmass" else {}


class Trainer:
    def __init__(self, cfg: RunConfig, demos: DemoSet | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.env = make_env(cfg.env, seed=cfg.seed, **_env_kwargs(cfg))
        self.eval_env = make_env(cfg.env, seed=cfg.seed, **_env_kwargs(cfg))
        if demos is None:
            demos = read_demos(cfg.demos, env_name=cfg.env)
        if len(demos) == 0:
            raise ValueError("training needs at least one demonstration")
        if (demos.obs_dim, demos.act_dim) != (self.env.obs_dim, self.env.act_dim):
            raise ValueError(f"demos have obs/act dims {(demos.obs_dim, demos.act_dim)}, "
                             f"environment {cfg.env!r} has {(self.env.obs_dim, self.env.act_dim)}")
        self.demos = demos
        arch = Architecture(self.env.obs_dim, self.env.act_dim, cfg.latent_dim, cfg.hidden,
                            cfg.layers, cfg.ensemble, cfg.free_nats)
        self.agent = CMILAgent(arch, self.rng, cfg.eps_d)
        self.opt = Optimizers(self.agent, cfg)
        self.buffer = ReplayBuffer(demos, cfg.buffer_capacity)
        self.noise = NoiseSpec(cfg.disc_noise_var)
        self.env_steps = 0
        self.out = Path(cfg.out_dir)
        self.stats: dict[str, list[float]] = defaultdict(list)
        self.eval_seed = cfg.seed * 7919 + EVAL_SEED_OFFSET
        self.expert_return: float | None = None
        # set once behaviour cloning is done: the policy's input space then stays fixed
        self.encoder_frozen = False
        self.return_scale = ReturnScale()
        self._stage = "setup"
        self._collector = LatentActor(self.agent, deterministic=False, rng=self.rng)
        self._episode: tuple[list, list] | None = None

    # -- phases ----------------------------------------------------------
    def warmup_model(self, steps: int) -> float:
        self._stage = "world model"
        loss = math.nan
        for _ in range(steps):
            batch = self.buffer.sample(self.cfg.batch_size, 0, self.cfg.seq_len, self.rng)
            loss = self._model_step(batch).loss.value.item()
        return loss

    def expert_latents(self) -> tuple[np.ndarray, np.ndarray]:
        """Posterior-mean latents of every demo step, paired with the expert action."""
        lat, act = [], []
        for traj in self.demos:
            obs = np.asarray(traj.observations[:-1], dtype=np.float64)
            a = np.asarray(traj.actions, dtype=np.float64)
            post = infer_sequence(self.agent.model, obs, a, Graph(record=False),
                                  noise=np.zeros((1, len(a), self.agent.arch.latent_dim)))
            lat.append(post.latents.value[0])
            act.append(a)
        return np.concatenate(lat), np.concatenate(act)

    def pretrain_policy(self, steps: int) -> dict:
        self._stage = "behaviour cloning"
        lat, act = self.expert_latents()
        return bc_pretrain(self.agent.policy, lat, act, steps, self.opt.bc, self.rng)

    def collect_episode(self) -> Trajectory:
        traj = run_episode(self.env, self._collector)
        self.buffer.add(traj)
        self.env_steps += len(traj)
        return traj

    def env_step(self) -> None:
        """Advance the training environment by one step with the exploring policy."""
        if self._episode is None:
            self._collector.reset()
            self._episode = ([self.env.reset()], [])
        obs, acts = self._episode
        a = np.clip(self._collector.act(obs[-1]), -1.0, 1.0)
        o, _, done, success = self.env.step(a)
        obs.append(o)
        acts.append(a)
        self.env_steps += 1
        if done:
            self.buffer.add(Trajectory(np.array(obs), np.array(acts), bool(success)))
            self._episode = None

    # -- one gradient iteration -------------------------------------------
    def _model_step(self, batch):
        opt = self.opt.model_tail if self.encoder_frozen else self.opt.model
        g = Graph(trainable=opt.params)
        res = elbo_loss(self.agent.model, batch.observations, batch.actions, g, self.rng)
        opt.zero_grad()
        g.backward(res.loss)
        opt.step()
        return res

    def update(self) -> None:
        cfg, agent = self.cfg, self.agent
        b, length = cfg.batch_size, cfg.seq_len
        n_agent = b // 2 if len(self.buffer) else 0
        batch = self.buffer.sample(b - n_agent, n_agent, length, self.rng)

        self._stage = "world model"
        elbo = self._model_step(batch)
        self.stats["model_loss"].append(elbo.loss.value.item())
        # downstream latents come from the mean filter, exactly as the policy sees them
        # when acting; the sampled posterior is only for the ELBO
        d = agent.arch.latent_dim
        post = infer_sequence(agent.model, batch.observations, batch.actions, Graph(record=False),
                              noise=np.zeros(batch.actions.shape[:2] + (d,))).latents.value
        expert_rows = batch.is_expert
        exp_lat = post[expert_rows].reshape(-1, d)
        exp_act = batch.actions[expert_rows].reshape(-1, batch.actions.shape[-1])

        if cfg.bc_only:
            self._stage = "behaviour cloning"
            g = Graph()
            nll = -agent.policy.log_prob(g, exp_lat, exp_act).mean()
            self.opt.actor.zero_grad()
            g.backward(nll)
            self.opt.actor.step()
            self.stats["bc_nll"].append(nll.value.item())
            return

        # imagination from every posterior start
        self._stage = "imagination"
        g_act = Graph(trainable=agent.policy.parameters())
        flat = post.reshape(-1, d)
        n_all = len(flat)
        if 0 < cfg.imagine_starts < n_all:
            idx = np.sort(self.rng.choice(n_all, size=cfg.imagine_starts, replace=False))
        else:
            idx = np.arange(n_all)
        roll = imagine(agent.model, agent.policy, flat[idx], cfg.horizon, g_act, self.rng)
        h = roll.horizon
        lat = np.stack([s.value for s in roll.latents])  # (h+1, N, d)
        act = np.stack([a.value for a in roll.actions])  # (h+1, N, act)
        means = np.stack([m.value for m in roll.member_means])  # (h, K, N, d)

        # discriminator: expert posterior pairs vs imagined pairs from replay starts only
        self._stage = "discriminator"
        agent_cols = np.repeat(~expert_rows, length)[idx]
        if agent_cols.any():
            pol_lat = lat[:h, agent_cols].reshape(-1, d)
            pol_act = act[:h, agent_cols].reshape(-1, act.shape[-1])
            g = Graph()
            dl = discriminator_loss(agent.disc, exp_lat, exp_act, pol_lat, pol_act, self.noise, g,
                                    self.rng)
            if not np.isfinite(dl.value):
                raise FloatingPointError(f"discriminator loss is not finite ({dl.value.item()!r})")
            self.opt.disc.zero_grad()
            g.backward(dl)
            self.opt.disc.step()
            self.stats["disc_loss"].append(dl.value.item())
            self.stats["gap_estimate"].append(
                empirical_gap_estimate(agent.disc, exp_lat, exp_act, pol_lat, pol_act))
        self.stats["disagreement"].append(float(ensemble_disagreement(means.swapaxes(0, 1)).value.mean()))

        # conservative rewards on imagined transitions (differentiable for the actor)
        rewards = [conservative_reward(agent.disc, roll.latents[t], roll.actions[t],
                                       roll.member_means[t], True, cfg.alpha, g_act)
                   for t in range(h)]
        rew = np.stack([r.value for r in rewards])  # (h, N)

        # critics: imagined lambda targets plus real transitions
        self._stage = "critic"
        g0 = Graph(record=False)
        vbar = bootstrap_value(agent.critics, g0, lat, act, target=True).value  # (h+1, N)
        y_model = critic_targets(rew, vbar, cfg.gamma, cfg.lam)  # (h, N)
        # real transitions j -> j+1 whose successor was used as a rollout start
        succ = idx[idx % length != 0]
        pos = np.searchsorted(idx, succ)
        s_j = flat[succ - 1]
        a_j = batch.actions.reshape(n_all, -1)[succ - 1]
        r_j = conservative_reward(agent.disc, s_j, a_j, None, False, cfg.alpha, g0).value
        next_v0, next_vl = vbar[0][pos], y_model[0][pos]
        y_data = data_targets(r_j, next_v0, next_vl, cfg.gamma, cfg.lam)
        g = Graph()
        cl = critic_loss(agent.critics, g, lat[:h], act[:h], y_model, s_j, a_j, y_data)
        self.opt.critic.zero_grad()
        g.backward(cl)
        self.opt.critic.step()
        self.stats["critic_loss"].append(cl.value.item())

        # actor: through rewards, dynamics and the freshly updated critics
        self._stage = "actor"
        values = bootstrap_value(agent.critics, g_act, stack(roll.latents[: h + 1], axis=0),
                                 stack(roll.actions[: h + 1], axis=0))
        scale = 1.0
        if cfg.normalize_returns:
            scale = self.return_scale.update(critic_targets(rew, values.value, cfg.gamma, cfg.lam))
        res = actor_loss(agent.policy, g_act, rewards, [values[t] for t in range(h + 1)],
                         cfg.gamma, cfg.lam, cfg.beta, exp_lat, exp_act,
                         mixture=cfg.actor_target == "mixture", value_scale=scale)
        self.opt.actor.zero_grad()
        g_act.backward(res.loss)
        self.opt.actor.step()
        self.stats["actor_loss"].append(res.loss.value.item())
        self.stats["bc_nll"].append(res.bc_nll)

        soft_update(agent.critics, cfg.tau)

    # -- evaluation and logging -------------------------------------------
    def evaluate(self) -> EvalResult:
        actor = LatentActor(self.agent, deterministic=True)
        return evaluate(actor, self.eval_env, self.cfg.eval_episodes, self.eval_seed)

    def evaluate_expert(self) -> EvalResult:
        return evaluate(make_expert(self.eval_env), self.eval_env, self.cfg.eval_episodes,
                        self.eval_seed)

    def _row(self, phase: str, ev: EvalResult) -> MetricsRow:
        mean = {k: float(np.mean(v)) if v else math.nan for k, v in self.stats.items()}
        self.stats.clear()
        return MetricsRow(
            env_steps=self.env_steps,
            phase=phase,
            success_rate=ev.success_rate,
            oracle_return=ev.mean_return,
            oracle_gap=self.expert_return - ev.mean_return,
            model_loss=mean.get("model_loss", math.nan),
            disc_loss=mean.get("disc_loss", math.nan),
            gap_estimate=mean.get("gap_estimate", math.nan),
            disagreement=mean.get("disagreement", math.nan),
            actor_loss=mean.get("actor_loss", math.nan),
            critic_loss=mean.get("critic_loss", math.nan),
            bc_nll=mean.get("bc_nll", math.nan),
        )

    def _checkpoint_and_raise(self, exc: Exception):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / "diverged.ckpt"
        try:
            self.agent.save(path)
        except OSError:  # pragma: no cover - best effort
            path = None
        raise TrainingDivergedError(self._stage, exc, path) from exc

    def run(self) -> RunResult:
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        metrics_path, timing_path = self.out / "metrics.csv", self.out / "timing.csv"
        metrics, timing = MetricsWriter(metrics_path), CsvLog(timing_path, TIMING_HEADER)
        t0 = time.perf_counter()
        self.expert_return = self.evaluate_expert().mean_return
        best = -1.0
        try:
            model_loss = self.warmup_model(cfg.model_warmup_steps)
            bc = self.pretrain_policy(cfg.bc_steps)
            self.stats["model_loss"].append(model_loss)
            self.stats["bc_nll"].append(bc["bc_nll"])
            self.encoder_frozen = cfg.freeze_encoder
            ev = self.evaluate()
            best = ev.success_rate
            metrics.write(self._row("pretrain", ev))
            timing.append([self.env_steps, time.perf_counter() - t0])
            log.info("pretrain: bc_nll %.3f success %.2f", bc["bc_nll"], ev.success_rate)

            self._stage = "seed episodes"
            for _ in range(cfg.seed_episodes):
                if self.env_steps >= cfg.total_env_steps:
                    break
                self.collect_episode()
            next_eval = (self.env_steps // cfg.eval_interval + 1) * cfg.eval_interval
            since_update = 0
            done_early = False
            while self.env_steps < cfg.total_env_steps and not done_early:
                self._stage = "environment"
                self.env_step()
                since_update += 1
                if since_update >= cfg.env_steps_per_update:
                    since_update = 0
                    self.update()
                if self.env_steps >= next_eval or self.env_steps >= cfg.total_env_steps:
                    next_eval += cfg.eval_interval
                    ev = self.evaluate()
                    best = max(best, ev.success_rate)
                    metrics.write(self._row("train", ev))
                    timing.append([self.env_steps, time.perf_counter() - t0])
                    log.info("step %d: success %.2f return %.1f", self.env_steps,
                             ev.success_rate, ev.mean_return)
                    done_early = 0 < cfg.target_success <= ev.success_rate
        except FloatingPointError as exc:
            self._checkpoint_and_raise(exc)
        ckpt = self.out / "final.ckpt"
        self.agent.save(ckpt)
        return RunResult(ckpt, metrics_path, timing_path, self.env_steps, ev.success_rate, best)


def run_training(cfg: RunConfig, demos: DemoSet | None = None) -> RunResult:
    """Full pipeline; writes ``metrics.csv``, ``timing.csv`` and ``final.ckpt`` to ``out_dir``."""
    return Trainer(cfg, demos).run()
