import dataclasses
import hashlib

import numpy as np
import pytest

import cmil.trainer.loop as loop
from cmil import cli
from cmil.adversary import _clamped_logit
from cmil.envs import PointMassEnv, RandomActor, ScriptedExpert
from cmil.envs.demos import DemoSet, Trajectory, collect_demos, write_demos
from cmil.trainer import (
    METRICS_HEADER,
    CMILAgent,
    ConfigError,
    LatentActor,
    ReplayBuffer,
    RunConfig,
    SequenceBatch,
    Trainer,
    evaluate,
    load_config,
    read_metrics,
    run_training,
)

TINY = dict(latent_dim=4, hidden=16, layers=1, ensemble=2, seq_len=8, batch_size=4,
            horizon=3, model_warmup_steps=10, bc_steps=10, seed_episodes=1,
            env_steps_per_update=25, total_env_steps=300, eval_interval=100, eval_episodes=2,
            imagine_starts=0)


@pytest.fixture(scope="module")
def demos():
    env = PointMassEnv()
    return collect_demos(env, ScriptedExpert.for_env(env), 10, seed=0)


@pytest.fixture(scope="module")
def demo_file(demos, tmp_path_factory):
    path = tmp_path_factory.mktemp("demos") / "demos.bin"
    write_demos(path, demos)
    return path


def tiny_config(tmp_path, demo_file, **changes) -> RunConfig:
    return RunConfig(demos=str(demo_file), out_dir=str(tmp_path / "run"), **{**TINY, **changes})


def _digest(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# config

def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nalpha = 3.5\nseed=4  # trailing\nbc_only=true\n\nenv=pointmass\n")
    cfg = load_config(path, ["alpha=0", "horizon=7"])
    assert (cfg.alpha, cfg.seed, cfg.bc_only, cfg.horizon) == (0.0, 4, True, 7)
    assert cfg.beta == RunConfig().beta


def test_config_round_trips_through_text(tmp_path):
    cfg = RunConfig(alpha=2.0, seed=9, out_dir="x/y", bc_only=True, total_env_steps=int(1e5))
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


@pytest.mark.parametrize("text, match", [
    ("nonsense=1\n", "unknown config key"),
    ("alpha\n", "expected key=value"),
    ("seed=abc\n", "bad value for seed"),
    ("gamma=1.0\n", "gamma"),
    ("actor_lr=0\n", "actor_lr"),
    ("horizon=0\n", "horizon"),
    ("ensemble=1\n", "ensemble"),
])
def test_bad_config_rejected(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.cfg"):
        load_config(tmp_path / "nope.cfg")


def test_defaults_carry_documented_values():
    cfg = RunConfig()
    assert (cfg.alpha, cfg.beta, cfg.disc_noise_var) == (10.0, 10.0, 2.5)
    assert (cfg.seed_episodes, cfg.total_env_steps) == (5, 150_000)


# --------------------------------------------------------------------------
# replay buffer

def _traj(rng, length=20):
    return Trajectory(rng.normal(size=(length + 1, 2)), rng.normal(size=(length, 2)), True,
                      rng.normal(size=length))


def test_demos_never_evicted():
    rng = np.random.default_rng(0)
    demo_set = DemoSet([_traj(rng) for _ in range(3)], 2, 2)
    buf = ReplayBuffer(demo_set, capacity=50)
    for _ in range(20):
        buf.add(_traj(rng))
    assert buf.steps <= 50 and len(buf) == 2
    assert len(buf.demos) == 3
    assert all(a is b for a, b in zip(buf.demos, demo_set.trajectories))


def test_buffer_drops_rewards_and_batch_has_no_reward_field():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(DemoSet([_traj(rng)], 2, 2))
    buf.add(_traj(rng))
    assert buf.episodes[0].oracle_rewards is None
    names = {f.name for f in dataclasses.fields(SequenceBatch)}
    assert names == {"observations", "actions", "is_expert"}
    assert not any("reward" in n for n in dir(buf.sample(2, 2, 5, rng)))


def test_sampled_windows_are_contiguous():
    rng = np.random.default_rng(2)
    traj = Trajectory(np.arange(31.0)[:, None].repeat(2, 1), np.arange(30.0)[:, None].repeat(2, 1))
    buf = ReplayBuffer(DemoSet([traj], 2, 2))
    buf.add(traj)
    batch = buf.sample(3, 3, 10, rng)
    assert batch.shape == (6, 10)
    np.testing.assert_array_equal(np.diff(batch.observations[..., 0], axis=1), 1.0)
    np.testing.assert_array_equal(batch.observations[..., 0], batch.actions[..., 0])
    np.testing.assert_array_equal(batch.is_expert, [True] * 3 + [False] * 3)


def test_short_episode_and_empty_pools_rejected():
    rng = np.random.default_rng(3)
    buf = ReplayBuffer(DemoSet([_traj(rng, 5)], 2, 2))
    with pytest.raises(ValueError, match="shorter"):
        buf.sample(1, 0, 10, rng)
    with pytest.raises(ValueError, match="no agent episodes"):
        buf.sample(1, 1, 3, rng)
    with pytest.raises(ValueError):
        ReplayBuffer(DemoSet([], 2, 2))


# --------------------------------------------------------------------------
# evaluation

def test_evaluation_of_expert_and_random_actors():
    env = PointMassEnv()
    assert evaluate(ScriptedExpert.for_env(env), env, 40, seed=0).success_rate >= 0.95
    assert evaluate(RandomActor(seed=0), env, 40, seed=0).success_rate <= 0.05
    assert evaluate(RandomActor(seed=1), env, 1, seed=3).success_rate in (0.0, 1.0)
    with pytest.raises(ValueError):
        evaluate(RandomActor(), env, 0)


# --------------------------------------------------------------------------
# penalty scoping

def test_penalty_on_every_imagined_and_no_real_transition(tmp_path, demo_file, monkeypatch):
    cfg = tiny_config(tmp_path, demo_file, alpha=3.0)
    trainer = Trainer(cfg)
    trainer.warmup_model(5)
    trainer.collect_episode()
    counts = {True: [0, 0], False: [0, 0]}  # label -> [penalized, total]
    original = loop.conservative_reward

    def audit(disc, lat, act, member_means, is_model_rollout, alpha, graph):
        out = original(disc, lat, act, member_means, is_model_rollout, alpha, graph)
        logit = _clamped_logit(disc, graph, lat, act).value
        penalty = logit - out.value
        counts[is_model_rollout][0] += int(np.count_nonzero(penalty > 0))
        counts[is_model_rollout][1] += penalty.size
        if not is_model_rollout:
            assert np.all(penalty == 0.0)
        return out

    monkeypatch.setattr(loop, "conservative_reward", audit)
    trainer.update()
    imagined, real = counts[True], counts[False]
    assert imagined[1] == cfg.horizon * cfg.batch_size * cfg.seq_len
    assert real[1] > 0
    assert imagined[0] == imagined[1]
    assert real[0] == 0


def test_alpha_zero_removes_the_penalty(tmp_path, demo_file, monkeypatch):
    trainer = Trainer(tiny_config(tmp_path, demo_file, alpha=0.0))
    trainer.warmup_model(2)
    trainer.collect_episode()
    seen = []
    original = loop.conservative_reward

    def audit(disc, lat, act, member_means, is_model_rollout, alpha, graph):
        out = original(disc, lat, act, member_means, is_model_rollout, alpha, graph)
        seen.append(np.array_equal(out.value, _clamped_logit(disc, graph, lat, act).value))
        return out

    monkeypatch.setattr(loop, "conservative_reward", audit)
    trainer.update()
    assert seen and all(seen)


def test_discriminator_policy_side_excludes_demo_starts(tmp_path, demo_file, monkeypatch):
    trainer = Trainer(tiny_config(tmp_path, demo_file))
    trainer.warmup_model(2)
    trainer.collect_episode()
    sizes = []
    original = loop.discriminator_loss

    def spy(disc, e_lat, e_act, p_lat, p_act, *rest):
        sizes.append((len(e_lat), len(p_lat)))
        return original(disc, e_lat, e_act, p_lat, p_act, *rest)

    monkeypatch.setattr(loop, "discriminator_loss", spy)
    trainer.update()
    cfg = trainer.cfg
    half_rows = cfg.batch_size // 2 * cfg.seq_len
    assert sizes == [(half_rows, cfg.horizon * half_rows)]


# --------------------------------------------------------------------------
# full pipeline

def test_zero_steps_emits_only_the_pretrain_row(tmp_path, demo_file):
    res = run_training(tiny_config(tmp_path, demo_file, total_env_steps=0))
    cols = read_metrics(res.metrics)
    assert cols["phase"] == ["pretrain"] and cols["env_steps"] == [0.0]
    assert res.env_steps == 0 and res.checkpoint.exists()


def test_metrics_header_is_stable(tmp_path, demo_file):
    res = run_training(tiny_config(tmp_path, demo_file, total_env_steps=0))
    assert res.metrics.read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    assert METRICS_HEADER == ("env_steps", "phase", "success_rate", "oracle_return", "oracle_gap",
                              "model_loss", "disc_loss", "gap_estimate", "disagreement",
                              "actor_loss", "critic_loss", "bc_nll")
    assert res.timing.read_text().splitlines()[0] == "env_steps,wall_clock_s"


def test_same_seed_gives_identical_metrics_bytes(tmp_path, demo_file):
    a = run_training(tiny_config(tmp_path / "a", demo_file))
    b = run_training(tiny_config(tmp_path / "b", demo_file))
    assert a.metrics.read_bytes() == b.metrics.read_bytes()
    assert _digest(a.checkpoint) == _digest(b.checkpoint)
    cols = read_metrics(a.metrics)
    # one seed episode of 100 steps, then evals at 200 and at the budget
    assert cols["phase"] == ["pretrain", "train", "train"]
    assert cols["env_steps"] == [0.0, 200.0, 300.0]
    c = run_training(tiny_config(tmp_path / "c", demo_file, seed=1))
    assert c.metrics.read_bytes() != a.metrics.read_bytes()


def test_bc_only_run_completes_without_adversarial_terms(tmp_path, demo_file):
    res = run_training(tiny_config(tmp_path, demo_file, bc_only=True))
    cols = read_metrics(res.metrics)
    assert all(np.isnan(cols["disc_loss"])) and all(np.isnan(cols["actor_loss"]))
    assert np.isfinite(cols["bc_nll"]).all()


def test_missing_demo_file_is_immediate(tmp_path):
    with pytest.raises(FileNotFoundError):
        Trainer(RunConfig(demos=str(tmp_path / "none.bin"), out_dir=str(tmp_path)))


def test_divergence_saves_checkpoint_and_names_module(tmp_path, demo_file, monkeypatch):
    from cmil.errors import TrainingDivergedError

    def boom(*args, **kwargs):
        raise FloatingPointError("critic loss is not finite")

    monkeypatch.setattr(loop, "critic_loss", boom)
    with pytest.raises(TrainingDivergedError, match="critic") as info:
        run_training(tiny_config(tmp_path, demo_file))
    assert info.value.checkpoint.exists()


def test_checkpoint_restores_the_same_actor(tmp_path, demo_file):
    res = run_training(tiny_config(tmp_path, demo_file, total_env_steps=0))
    agent = CMILAgent.load(res.checkpoint)
    env = PointMassEnv()
    r1 = evaluate(LatentActor(agent), env, 3, seed=5)
    agent2 = CMILAgent.load(res.checkpoint)
    r2 = evaluate(LatentActor(agent2), env, 3, seed=5)
    np.testing.assert_array_equal(r1.returns, r2.returns)
    assert agent.arch.latent_dim == TINY["latent_dim"] and agent.arch.ensemble == TINY["ensemble"]


@pytest.mark.slow
def test_pretrained_policy_beats_random_threefold(tmp_path, demos):
    cfg = RunConfig(out_dir=str(tmp_path), seed=0)
    trainer = Trainer(cfg, demos)
    trainer.warmup_model(cfg.model_warmup_steps)
    trainer.pretrain_policy(cfg.bc_steps)
    env = PointMassEnv()
    bc = evaluate(LatentActor(trainer.agent), env, 50, seed=100).success_rate
    rnd = evaluate(RandomActor(seed=0), env, 50, seed=100).success_rate
    assert bc >= 3 * max(rnd, 1 / 50)


# --------------------------------------------------------------------------
# command line

def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["train", str(tmp_path / "missing.cfg")]) == 2
    assert "missing.cfg" in capsys.readouterr().err
    assert cli.main(["collect-demos", "mars", "3", "x.bin"]) == 2
    assert cli.main(["collect-demos", "pointmass", "0", "x.bin"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("wat=1\n")
    assert cli.main(["train", str(bad)]) == 2
    assert "wat" in capsys.readouterr().err


def test_cli_runtime_failures(tmp_path):
    assert cli.main(["eval", str(tmp_path / "nope.ckpt"), "pointmass"]) == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"demos={tmp_path / 'absent.bin'}\nout_dir={tmp_path / 'o'}\n")
    assert cli.main(["train", str(cfg)]) == 1


def test_cli_collect_train_eval_plot(tmp_path, capsys):
    d = tmp_path / "d.bin"
    assert cli.main(["collect-demos", "pointmass", "10", str(d)]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text("".join(f"{k}={v}\n" for k, v in TINY.items())
                   + f"demos={d}\nout_dir={tmp_path / 'run'}\n")
    assert cli.main(["train", str(cfg), "--override", "total_env_steps=100"]) == 0
    ckpt = tmp_path / "run" / "final.ckpt"
    assert cli.main(["eval", str(ckpt), "pointmass", "--episodes", "2"]) == 0
    assert "success rate" in capsys.readouterr().out
    assert cli.main(["eval", str(ckpt), "tabular:0:4:2"]) == 1
    svg = tmp_path / "m.svg"
    assert cli.main(["plot", str(tmp_path / "run" / "metrics.csv"), str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<svg")


def test_cli_alpha_override_is_the_only_config_difference(tmp_path, monkeypatch):
    captured = []
    monkeypatch.setattr(loop.Trainer, "run", lambda self: captured.append(self.cfg) or _fake_result())
    monkeypatch.setattr(loop.Trainer, "__init__", lambda self, cfg, demos=None: setattr(self, "cfg", cfg))
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=2\n")
    assert cli.main(["train", str(cfg)]) == 0
    assert cli.main(["train", str(cfg), "--override", "alpha=0"]) == 0
    base, ablation = captured
    diff = {f.name for f in dataclasses.fields(RunConfig)
            if getattr(base, f.name) != getattr(ablation, f.name)}
    assert diff == {"alpha"} and ablation.alpha == 0.0 and base.alpha == 10.0


def _fake_result():
    from pathlib import Path
    return loop.RunResult(Path("c"), Path("m"), Path("t"), 0, 0.0, 0.0)


def test_cli_verify_bounds(tmp_path, capsys):
    assert cli.main(["verify-bounds", "thm2", "--out", str(tmp_path)]) == 0
    assert "0 violations" in capsys.readouterr().out
    assert (tmp_path / "thm2.csv").exists()
    assert cli.main(["verify-bounds", "nope"]) == 2
