"""The point-mass comparison: CMIL over several seeds plus BC-only and alpha=0 runs.

Finished runs are stamped with their config and a hash of the package source,
so a repeated call with unchanged code reuses them instead of retraining.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..envs import make_env, make_expert
from ..envs.demos import collect_demos, read_demos, write_demos
from .config import RunConfig
from .loop import run_training
from .metrics import read_metrics

log = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parents[1]
# modules that cannot change a training run's numbers
_NOT_TRAINING = {"cli.py", "theory.py", "trainer/plot.py", "trainer/experiments.py"}


@dataclass
class PlannedRun:
    name: str
    seed: int
    overrides: dict = field(default_factory=dict)


def planned_runs(seeds=(0, 1, 2), baseline_seed: int = 0) -> list[PlannedRun]:
    runs = [PlannedRun(f"cmil-seed{s}", s) for s in seeds]
    runs.append(PlannedRun(f"bc-seed{baseline_seed}", baseline_seed, {"bc_only": True}))
    runs.append(PlannedRun(f"alpha0-seed{baseline_seed}", baseline_seed, {"alpha": 0.0}))
    return runs


def code_fingerprint() -> str:
    h = hashlib.sha256()
    for path in sorted(PACKAGE_ROOT.rglob("*.py")):
        rel = path.relative_to(PACKAGE_ROOT).as_posix()
        if rel in _NOT_TRAINING:
            continue
        h.update(rel.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _demo_file(root: Path, seed: int, n_demos: int) -> Path:
    path = root / f"demos-seed{seed}-n{n_demos}.bin"
    if not path.exists():
        env = make_env("pointmass", seed=seed)
        write_demos(path, collect_demos(env, make_expert(env), n_demos, seed=seed))
    read_demos(path)  # fail early on a damaged cache
    return path


def run_comparison(root, seeds=(0, 1, 2), total_env_steps: int = 150_000, n_demos: int = 10,
                   reuse: bool = True, **common) -> dict[str, Path]:
    """Train every planned run under ``root``; returns run name -> metrics CSV."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    fingerprint = code_fingerprint()
    out = {}
    for run in planned_runs(seeds):
        run_dir = root / run.name
        cfg = RunConfig(seed=run.seed, demos=str(_demo_file(root, run.seed, n_demos)),
                        out_dir=str(run_dir), total_env_steps=total_env_steps,
                        **{**common, **run.overrides})
        stamp = cfg.to_text() + f"# code {fingerprint}\n"
        done = run_dir / "DONE"
        if reuse and done.exists() and done.read_text(encoding="utf-8") == stamp:
            log.info("%s: reusing finished run", run.name)
        else:
            done.unlink(missing_ok=True)
            log.info("%s: training", run.name)
            run_training(cfg)
            done.write_text(stamp, encoding="utf-8")
        out[run.name] = run_dir / "metrics.csv"
    return out


def first_success_step(cols: dict, threshold: float) -> float | None:
    """Environment step of the first evaluation at or above ``threshold``."""
    for step, rate in zip(cols["env_steps"], cols["success_rate"]):
        if rate >= threshold:
            return step
    return None


def mean_series(paths, column: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean of ``column`` over runs, on the steps all runs logged."""
    runs = [read_metrics(p) for p in paths]
    n = min(len(c["env_steps"]) for c in runs)
    steps = np.asarray(runs[0]["env_steps"][:n])
    return steps, np.mean([np.asarray(c[column][:n], dtype=float) for c in runs], axis=0)
