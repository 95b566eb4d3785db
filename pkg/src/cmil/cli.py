"""Command-line entry point: ``cmil <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .diffcore import CheckpointError
from .envs import make_env, make_expert, parse_env_id
from .envs.demos import DemoFormatError, ExpertTooWeakError, collect_demos, write_demos
from .errors import TrainingDivergedError
from .theory import SUITES, run_suite

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env_id(text: str) -> str:
    try:
        parse_env_id(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmil", description="Conservative model-based adversarial "
                                "imitation learning on desk-scale environments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect-demos", help="roll out the scripted expert and save demos")
    c.add_argument("env", type=_env_id, help='"pointmass" or "tabular:<seed>:<S>:<A>"')
    c.add_argument("n", type=_positive, help="number of successful episodes")
    c.add_argument("out", help="output demo file")
    c.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="run the full training pipeline")
    t.add_argument("config", help="key=value config file")
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")

    e = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    e.add_argument("checkpoint")
    e.add_argument("env", type=_env_id)
    e.add_argument("--episodes", type=_positive, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sigma-obs", type=float, default=None)

    v = sub.add_parser("verify-bounds", help="check the value bounds on random tabular models")
    v.add_argument("suite", choices=SUITES)
    v.add_argument("--out", default=None, help="directory for the per-instance CSV")
    v.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="render metrics CSVs as SVG charts")
    pl.add_argument("csv", nargs="+", help="one or more metrics.csv files")
    pl.add_argument("out", help="output .svg path")
    return p


def _collect(args) -> int:
    env = make_env(args.env, seed=args.seed)
    demos = collect_demos(env, make_expert(env), args.n, seed=args.seed, env_name=args.env)
    write_demos(args.out, demos)
    mean_len = sum(len(t) for t in demos) / len(demos)
    print(f"wrote {len(demos)} episodes (mean length {mean_len:.1f}) to {args.out}")
    return EXIT_OK


def _train(args) -> int:
    from .trainer import ConfigError, load_config, run_training

    try:
        cfg = load_config(args.config, args.override)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except ConfigError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    result = run_training(cfg)
    print(f"env steps {result.env_steps}; final success {result.final_success:.2f}; "
          f"best {result.best_success:.2f}")
    print(f"metrics: {result.metrics}\ncheckpoint: {result.checkpoint}")
    return EXIT_OK


def _eval(args) -> int:
    from .trainer import CMILAgent, LatentActor, evaluate

    agent = CMILAgent.load(args.checkpoint)
    kw = {"sigma_obs": args.sigma_obs} if args.sigma_obs is not None else {}
    env = make_env(args.env, seed=args.seed, **kw)
    if (env.obs_dim, env.act_dim) != (agent.arch.obs_dim, agent.arch.act_dim):
        raise ValueError(f"checkpoint expects obs/act dims {(agent.arch.obs_dim, agent.arch.act_dim)}, "
                         f"environment {args.env!r} has {(env.obs_dim, env.act_dim)}")
    res = evaluate(LatentActor(agent), env, args.episodes, seed=args.seed)
    print(f"success rate {res.success_rate:.3f} over {res.n} episodes; "
          f"mean oracle return {res.mean_return:.3f}")
    return EXIT_OK


def _verify(args) -> int:
    passed, summary = run_suite(args.suite, args.out, seed=args.seed)
    print(summary)
    return EXIT_OK if passed else EXIT_FAILURE


def _plot(args) -> int:
    from .trainer.plot import plot_metrics

    out = plot_metrics(args.csv, args.out)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"collect-demos": _collect, "train": _train, "eval": _eval,
            "verify-bounds": _verify, "plot": _plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cmil {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"cmil {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, CheckpointError, DemoFormatError, ExpertTooWeakError,
            KeyError, RuntimeError) as exc:
        print(f"cmil {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
